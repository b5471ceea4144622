#include "doctest.h"

#include <cmath>

#include "c2vl/encoders.hpp"
#include "c2vl/synth.hpp"
#include "test_util.hpp"

// after the Eigen-bearing headers (resolv.h macro hygiene)
#include "httplib.h"
#include "json.hpp"

using namespace c2vl;

namespace {

FrameBlock random_block(int batch, int frames, int joints, int channels, std::uint64_t seed) {
    FrameBlock b = FrameBlock::zeros(batch, frames, joints, channels);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& f : b.f)
        for (Eigen::Index i = 0; i < f.rows(); ++i)
            for (Eigen::Index j = 0; j < f.cols(); ++j) f(i, j) = dist(rng);
    return b;
}

std::vector<SkeletonSequence> toy_batch(int n, int frames, int joints, std::uint64_t seed) {
    std::vector<SkeletonSequence> out;
    for (int i = 0; i < n; ++i) {
        SkeletonSequence s;
        s.sample_id = "toy" + std::to_string(i);
        s.joints = joints;
        s.bodies = 1;
        s.data = c2vl_test::random_matrix(frames, joints * 3, seed + i);
        out.push_back(std::move(s));
    }
    return out;
}

EncoderConfig tiny_config(int joints) {
    EncoderConfig cfg;
    cfg.joints = joints;
    cfg.bodies = 1;
    cfg.channels = {4, 5};
    cfg.strides = {1, 2};
    cfg.temporal_kernel = 3;
    return cfg;
}

}  // namespace

TEST_CASE("encoder produces BxF features deterministically") {
    auto seqs = toy_batch(4, 64, 5, 1);
    std::vector<const SkeletonSequence*> batch;
    for (const auto& s : seqs) batch.push_back(&s);
    EncoderConfig cfg;
    cfg.joints = 5;
    GraphEncoder enc(cfg, BoneTable::chain(5), 7);
    Eigen::MatrixXd f1 = encode_skeleton(enc, batch, StreamKind::joint, BoneTable::chain(5), false);
    CHECK(f1.rows() == 4);
    CHECK(f1.cols() == enc.feature_dim());
    Eigen::MatrixXd f2 = encode_skeleton(enc, batch, StreamKind::joint, BoneTable::chain(5), false);
    CHECK((f1 - f2).cwiseAbs().maxCoeff() == 0.0);  // eval mode is a pure function
}

TEST_CASE("all-zero sequences still give finite features") {
    SkeletonSequence z;
    z.sample_id = "zero";
    z.joints = 5;
    z.bodies = 1;
    z.data = Eigen::MatrixXd::Zero(64, 15);
    EncoderConfig cfg;
    cfg.joints = 5;
    GraphEncoder enc(cfg, BoneTable::chain(5), 3);
    Eigen::MatrixXd f = encode_skeleton(enc, {&z}, StreamKind::joint, BoneTable::chain(5), false);
    CHECK(f.allFinite());
}

TEST_CASE("shape mismatch in a batch names the offending samples") {
    auto seqs = toy_batch(2, 64, 5, 9);
    SkeletonSequence odd;
    odd.sample_id = "odd-one";
    odd.joints = 4;
    odd.bodies = 1;
    odd.data = Eigen::MatrixXd::Zero(64, 12);
    EncoderConfig cfg;
    cfg.joints = 5;
    GraphEncoder enc(cfg, BoneTable::chain(5), 3);
    try {
        encode_skeleton(enc, {&seqs[0], &seqs[1], &odd}, StreamKind::joint, BoneTable::chain(5),
                        false);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("odd-one") != std::string::npos);
    }
}

TEST_CASE("encoder parameter gradients match finite differences") {
    const int joints = 3, frames = 6, batch = 2;
    EncoderConfig cfg = tiny_config(joints);
    GraphEncoder enc(cfg, BoneTable::chain(joints), 11);
    FrameBlock in = random_block(batch, frames, joints, 3, 5);
    Eigen::MatrixXd probe = c2vl_test::random_matrix(batch, cfg.feature_dim(), 6);

    auto value = [&]() { return (enc.forward(in, false).cwiseProduct(probe)).sum(); };

    for (Param* p : enc.params()) p->zero_grad();
    enc.forward(in, true);
    enc.backward(probe);

    const double h = 1e-6;
    for (Param* p : enc.params()) {
        for (Eigen::Index i = 0; i < std::min<Eigen::Index>(p->value.rows(), 3); ++i) {
            for (Eigen::Index j = 0; j < std::min<Eigen::Index>(p->value.cols(), 3); ++j) {
                double orig = p->value(i, j);
                p->value(i, j) = orig + h;
                double up = value();
                p->value(i, j) = orig - h;
                double dn = value();
                p->value(i, j) = orig;
                double fd = (up - dn) / (2 * h);
                INFO("param ", p->name, " (", i, ",", j, ")");
                CHECK(p->grad(i, j) == doctest::Approx(fd).epsilon(1e-4));
            }
        }
    }
}

TEST_CASE("projector rows are unit norm; scale invariance holds without bias") {
    Projector proj("p", 6, 8, 4, false, 13);
    Eigen::MatrixXd x = c2vl_test::random_matrix(5, 6, 21);
    Eigen::MatrixXd e1 = proj.forward(x, false);
    for (Eigen::Index i = 0; i < e1.rows(); ++i)
        CHECK(e1.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));
    Eigen::MatrixXd e2 = proj.forward(Eigen::MatrixXd(5.0 * x), false);
    CHECK((e1 - e2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("zero feature rows pass through the projector without NaN") {
    Projector proj("p", 6, 8, 4, true, 17);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 6);
    Eigen::MatrixXd e = proj.forward(x, false);
    CHECK(e.allFinite());
    for (Eigen::Index i = 0; i < e.rows(); ++i)
        CHECK(e.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("projector gradients match finite differences") {
    Projector proj("p", 4, 6, 3, true, 23);
    Eigen::MatrixXd x = c2vl_test::random_matrix(3, 4, 31);
    Eigen::MatrixXd probe = c2vl_test::random_matrix(3, 3, 32);
    auto value = [&](const Eigen::MatrixXd& input) {
        return (proj.forward(input, false).cwiseProduct(probe)).sum();
    };
    for (Param* p : proj.params()) p->zero_grad();
    proj.forward(x, true);
    Eigen::MatrixXd dx = proj.backward(probe);

    const double h = 1e-6;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            Eigen::MatrixXd xp = x, xm = x;
            xp(i, j) += h;
            xm(i, j) -= h;
            double fd = (value(xp) - value(xm)) / (2 * h);
            CHECK(dx(i, j) == doctest::Approx(fd).epsilon(1e-4));
        }
    }
    for (Param* p : proj.params()) {
        for (Eigen::Index i = 0; i < std::min<Eigen::Index>(p->value.rows(), 2); ++i) {
            for (Eigen::Index j = 0; j < std::min<Eigen::Index>(p->value.cols(), 2); ++j) {
                double orig = p->value(i, j);
                p->value(i, j) = orig + h;
                double up = value(x);
                p->value(i, j) = orig - h;
                double dn = value(x);
                p->value(i, j) = orig;
                CHECK(p->grad(i, j) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4));
            }
        }
    }
}

TEST_CASE("temperature parameter clamps and respects fixed mode") {
    TemperatureParam t = TemperatureParam::init(0.07, true);
    CHECK(t.tau() == doctest::Approx(0.07));
    t.apply_grad(-1000.0, 1.0);  // would push tau far above 1
    CHECK(t.tau() == doctest::Approx(1.0));
    t.apply_grad(1000.0, 1.0);
    CHECK(t.tau() == doctest::Approx(1e-3));
    TemperatureParam fixed = TemperatureParam::init(0.07, false);
    fixed.apply_grad(-5.0, 1.0);
    CHECK(fixed.tau() == doctest::Approx(0.07));
    CHECK_THROWS_AS(TemperatureParam::init(0.0, true), ConfigError);
}

TEST_CASE("stub frozen encoder: deterministic, frozen digest, separated captions") {
    StubFrozenEncoder enc(8, 0);
    Eigen::MatrixXd a = enc.encode_texts({"walk forward"});
    Eigen::MatrixXd b = enc.encode_texts({"walk forward"});
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.row(0).norm() == doctest::Approx(1.0).epsilon(1e-9));

    std::string digest = enc.weight_digest();
    for (int i = 0; i < 100; ++i) {
        enc.encode_texts({"caption " + std::to_string(i)});
        CHECK(enc.weight_digest() == digest);  // frozen contract
    }

    // distinct class captions from the synthetic corpus spread apart
    SynthCorpus corpus = synth_generate(3, 2, 7);
    std::vector<std::string> captions;
    for (int k = 0; k < 3; ++k) captions.push_back(corpus.prompts[2 * k].language.text);
    CHECK(captions[0] != captions[1]);
    CHECK(captions[1] != captions[2]);
    Eigen::MatrixXd e = enc.encode_texts(captions);
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) CHECK(e.row(i).dot(e.row(j)) < 0.9);
}

TEST_CASE("sgd optimizer: parameter accounting and momentum arithmetic") {
    Param w("w", 1, 1), v("v", 2, 2);
    w.value << 1.0;
    v.value.setConstant(2.0);
    SgdOptimizer opt({&w, &v}, 0.9, 0.0);
    CHECK(opt.parameter_count() == 5);

    w.grad << 0.5;
    opt.step(0.1);
    CHECK(w.value(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5));
    w.grad << 0.5;
    opt.step(0.1);  // velocity = 0.9*0.5 + 0.5 = 0.95
    CHECK(w.value(0, 0) == doctest::Approx(0.95 - 0.1 * 0.95));

    Param d("d", 1, 1);
    d.value << 1.0;
    d.grad << 0.0;
    SgdOptimizer decay({&d}, 0.0, 0.1);
    decay.step(1.0);  // g = 0 + 0.1 * 1.0
    CHECK(d.value(0, 0) == doctest::Approx(0.9));
}

TEST_CASE("weight digest tracks parameter changes") {
    EncoderConfig cfg = tiny_config(3);
    GraphEncoder enc(cfg, BoneTable::chain(3), 5);
    std::string d1 = enc.weight_digest();
    enc.params()[0]->value(0, 0) += 1.0;
    CHECK(enc.weight_digest() != d1);
}

TEST_CASE("remote frozen encoder negotiates dim and normalizes rows") {
    httplib::Server server;
    server.Get("/info", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"name":"toy-encoder","dim":4,"digest":"abc123"})",
                        "application/json");
    });
    server.Post("/encode_texts", [&](const httplib::Request& req, httplib::Response& res) {
        auto j = nlohmann::json::parse(req.body);
        nlohmann::json out;
        out["embeddings"] = nlohmann::json::array();
        for (std::size_t i = 0; i < j.at("texts").size(); ++i)
            out["embeddings"].push_back({2.0, 0.0, 0.0, 2.0});  // not unit norm on the wire
        res.set_content(out.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread st([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteFrozenEncoder enc("http://127.0.0.1:" + std::to_string(port));
    CHECK(enc.dim() == 4);
    CHECK(enc.name() == "toy-encoder");
    CHECK(enc.weight_digest() == "abc123");
    Eigen::MatrixXd e = enc.encode_texts({"a", "b"});
    CHECK(e.rows() == 2);
    CHECK(e.row(0).norm() == doctest::Approx(1.0).epsilon(1e-9));

    server.stop();
    st.join();
}

TEST_CASE("clip frozen-encoder selection without an endpoint directs to stub mode") {
    unsetenv("C2VL_CLIP_PATH");
    try {
        make_frozen_encoder("clip-vit-l14-336", 8, 0);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("stub") != std::string::npos);
    }
    CHECK_THROWS_AS(make_frozen_encoder("nonsense", 8, 0), ConfigError);
    auto stub = make_frozen_encoder("stub", 8, 0);
    CHECK(stub->dim() == 8);
}

TEST_CASE("two-body sequences stack along the channel axis") {
    auto seqs = toy_batch(1, 8, 4, 44);
    SkeletonSequence two;
    two.sample_id = "two";
    two.joints = 4;
    two.bodies = 2;
    two.data = c2vl_test::random_matrix(8, 24, 45);
    std::vector<const Eigen::MatrixXd*> rows{&two.data};
    FrameBlock b = to_frame_block(rows, 4, 2);
    CHECK(b.f[0].cols() == 6);  // 3 coords x 2 bodies
    CHECK(b.f[0](2, 4) == two.data(0, (1 * 4 + 2) * 3 + 1));  // body 1, joint 2, coord y
}
