#include "c2vl/synth.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "c2vl/common.hpp"

namespace c2vl {

namespace {
constexpr int kJoints = 5;
constexpr int kFrames = 64;
constexpr int kSubjects = 10;
}  // namespace

std::unordered_map<std::string, int> SynthCorpus::label_map() const {
    std::unordered_map<std::string, int> out;
    for (std::size_t i = 0; i < sequences.size(); ++i) out[sequences[i].sample_id] = labels[i];
    return out;
}

SynthCorpus synth_generate(int n_classes, int n_per_class, std::uint64_t seed) {
    if (n_classes < 2) throw ConfigError("synth_generate: need at least 2 classes");
    if (n_per_class < 1) throw ConfigError("synth_generate: need at least 1 sample per class");

    SynthCorpus corpus;
    for (int k = 0; k < n_classes; ++k) {
        std::mt19937_64 class_rng(seed ^ fnv1a64("class", 1469598103934665603ull + k));
        std::uniform_real_distribution<double> u01(0.0, 1.0);

        // class template: static offset + oscillation along a class direction
        double theta = 2.0 * M_PI * k / n_classes;
        Eigen::Vector3d offset(std::cos(theta), std::sin(theta), 0.4 * k);
        Eigen::Vector3d dir(u01(class_rng) - 0.5, u01(class_rng) - 0.5, u01(class_rng) - 0.5);
        dir.normalize();
        double freq = 1.0 + (k % 4);
        double joint_phase = 0.5 + 1.5 * u01(class_rng);

        for (int i = 0; i < n_per_class; ++i) {
            std::mt19937_64 rng(seed ^ fnv1a64("sample", (k * 100003ull) + i));
            std::normal_distribution<double> noise(0.0, 0.03);
            std::uniform_real_distribution<double> jitter(-0.1, 0.1);
            double phase_shift = 0.5 * u01(rng);
            double amp = 0.4 * (1.0 + jitter(rng));

            SkeletonSequence s;
            s.joints = kJoints;
            s.bodies = 1;
            s.label = k;
            s.subject_id = 1 + (i % kSubjects);
            s.camera_id = 1;
            s.setup_id = 1;
            char buf[48];
            std::snprintf(buf, sizeof(buf), "synth_c%02d_i%03d", k, i);
            s.sample_id = buf;
            s.data.resize(kFrames, s.row_width());
            for (int t = 0; t < kFrames; ++t) {
                for (int j = 0; j < kJoints; ++j) {
                    double osc = amp * std::sin(2.0 * M_PI * freq * t / kFrames +
                                                joint_phase * j + phase_shift);
                    Eigen::Vector3d p =
                        Eigen::Vector3d(0.25 * j, 0.0, 0.0) + offset + osc * dir;
                    for (int c = 0; c < 3; ++c)
                        s.data(t, s.col(j, c, 0)) = p(c) + noise(rng);
                }
            }
            corpus.sequences.push_back(std::move(s));
            corpus.labels.push_back(k);
        }
    }

    // class-consistent stub prompts through the regular generation path
    SyntheticFrameSource source(corpus.label_map(), seed);
    StubEngineClient client(seed);
    FramePolicy policy;
    for (const auto& s : corpus.sequences) {
        PromptRecord rec;
        rec.sample_id = s.sample_id;
        rec.vision = generate_vision_prompt(source, s.sample_id, client, policy);
        rec.language = generate_language_prompt(rec.vision, client);
        rec.meta.detector_name = client.detector_name();
        rec.meta.vqa_name = client.vqa_name();
        rec.meta.timestamp = "1970-01-01T00:00:00Z";  // keep the corpus bit-reproducible
        corpus.prompts.push_back(std::move(rec));
    }
    return corpus;
}

Eigen::MatrixXd class_motion_templates(const SynthCorpus& corpus) {
    if (corpus.sequences.empty()) throw DataError("empty corpus");
    int n_classes = 0;
    for (int l : corpus.labels) n_classes = std::max(n_classes, l + 1);
    const auto cols = corpus.sequences[0].data.size();
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_classes, cols);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_classes);
    for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
        const auto& d = corpus.sequences[i].data;
        Eigen::Map<const Eigen::VectorXd> flat(d.data(), d.size());
        sums.row(corpus.labels[i]) += flat.transpose();
        counts(corpus.labels[i]) += 1.0;
    }
    for (int k = 0; k < n_classes; ++k) sums.row(k) /= counts(k);
    return sums;
}

void write_synth_dataset(const SynthCorpus& corpus, const std::string& dir) {
    save_container(dir, corpus.sequences);
    SplitDefinition def;
    for (int s = 1; s <= 7; ++s) def.train_subjects.push_back(s);
    save_split_definition(dir + "/splits.json", def);
}

void shuffle_prompts_across_classes(SynthCorpus& corpus, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0)
        throw ConfigError("shuffle fraction must be in [0,1]");
    const auto n = corpus.prompts.size();
    int n_classes = 0;
    for (int l : corpus.labels) n_classes = std::max(n_classes, l + 1);

    // canonical prompt payload per class
    std::vector<const PromptRecord*> canon(n_classes, nullptr);
    for (std::size_t i = 0; i < n; ++i)
        if (canon[corpus.labels[i]] == nullptr) canon[corpus.labels[i]] = &corpus.prompts[i];

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed ^ fnv1a64("noise"));
    std::shuffle(order.begin(), order.end(), rng);
    auto m = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));

    std::uniform_int_distribution<int> pick(1, n_classes - 1);
    for (std::size_t i = 0; i < m && i < n; ++i) {
        std::size_t idx = order[i];
        int y = corpus.labels[idx];
        int donor = (y + pick(rng)) % n_classes;
        const PromptRecord& src = *canon[donor];
        PromptRecord& dst = corpus.prompts[idx];
        dst.vision.crop = src.vision.crop;
        dst.vision.box = src.vision.box;
        dst.vision.detector_score = src.vision.detector_score;
        dst.language.text = src.language.text;
    }
}

}  // namespace c2vl
