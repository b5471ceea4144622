#include "doctest.h"

#include <random>

#include "c2vl/common.hpp"
#include "c2vl/skeleton.hpp"
#include "test_util.hpp"

using namespace c2vl;

namespace {

SkeletonSequence make_seq(int frames, int joints, int bodies, std::uint64_t seed) {
    SkeletonSequence s;
    s.sample_id = "t";
    s.joints = joints;
    s.bodies = bodies;
    s.data = c2vl_test::random_matrix(frames, bodies * joints * 3, seed);
    return s;
}

}  // namespace

TEST_CASE("downsample 128 -> 64 picks floor(k*T/target) rows") {
    SkeletonSequence s = make_seq(128, 5, 1, 1);
    SkeletonSequence d = downsample_frames(s, 64);
    REQUIRE(d.frames() == 64);
    // index oracle: enumerate expected source rows independently
    for (int k = 0; k < 64; ++k) {
        long long idx = (static_cast<long long>(k) * 128) / 64;
        CHECK(d.data.row(k) == s.data.row(idx));
    }
}

TEST_CASE("downsample 64 -> 64 is the identity") {
    SkeletonSequence s = make_seq(64, 5, 1, 2);
    SkeletonSequence d = downsample_frames(s, 64);
    CHECK(d.data == s.data);
}

TEST_CASE("downsample 32 -> 64 repeats uniformly and monotonically") {
    SkeletonSequence s = make_seq(32, 4, 1, 3);
    SkeletonSequence d = downsample_frames(s, 64);
    REQUIRE(d.frames() == 64);
    int prev = 0;
    for (int k = 0; k < 64; ++k) {
        long long idx = (static_cast<long long>(k) * 32) / 64;
        CHECK(d.data.row(k) == s.data.row(idx));
        CHECK(idx >= prev);  // monotone non-decreasing selection
        prev = static_cast<int>(idx);
    }
}

TEST_CASE("downsample rejects empty input") {
    SkeletonSequence s;
    s.joints = 5;
    s.bodies = 1;
    s.data.resize(0, 15);
    CHECK_THROWS_AS(downsample_frames(s, 64), DataError);
}

TEST_CASE("motion of a constant pose is all zero") {
    SkeletonSequence s = make_seq(1, 5, 1, 4);
    Eigen::MatrixXd row = s.data;
    s.data = row.replicate(64, 1);
    ModalityStream m = derive_stream(s, StreamKind::motion, BoneTable::chain(5));
    CHECK(m.data.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("joint stream is a bitwise copy") {
    SkeletonSequence s = make_seq(64, 6, 2, 5);
    ModalityStream j = derive_stream(s, StreamKind::joint, BoneTable::chain(6));
    CHECK(j.data == s.data);
}

TEST_CASE("bone stream matches hand subtraction on a 3-joint chain") {
    SkeletonSequence s;
    s.joints = 3;
    s.bodies = 1;
    s.data.resize(1, 9);
    s.data << 0, 0, 0, 1, 0, 0, 1, 1, 0;
    ModalityStream b = derive_stream(s, StreamKind::bone, BoneTable::chain(3));
    Eigen::MatrixXd expected(1, 9);
    expected << 0, 0, 0, 1, 0, 0, 0, 1, 0;
    CHECK((b.data - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("motion telescopes back to joints") {
    SkeletonSequence s = make_seq(64, 5, 1, 6);
    ModalityStream m = derive_stream(s, StreamKind::motion, BoneTable::chain(5));
    Eigen::RowVectorXd acc = s.data.row(0);
    for (int t = 1; t < 64; ++t) {
        acc += m.data.row(t - 1);
        CHECK((acc - s.data.row(t)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("bone table mismatch raises a config error") {
    SkeletonSequence s = make_seq(64, 5, 1, 7);
    CHECK_THROWS_AS(derive_stream(s, StreamKind::bone, BoneTable::chain(7)), ConfigError);
}

TEST_CASE("ntu25 bone table is valid and rooted at the spine shoulder") {
    BoneTable b = BoneTable::ntu25();
    b.validate();
    CHECK(b.joints == 25);
    CHECK(b.parent[20] == 20);  // root
    int roots = 0;
    for (int j = 0; j < 25; ++j) roots += b.parent[j] == j ? 1 : 0;
    CHECK(roots == 1);
}

TEST_CASE("normalized adjacency is symmetric with self loops") {
    Eigen::MatrixXd a = normalized_adjacency(BoneTable::ntu25());
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    for (int i = 0; i < 25; ++i) CHECK(a(i, i) > 0.0);
}

TEST_CASE("sequence validation catches bad shapes and NaN") {
    SkeletonSequence s = make_seq(64, 5, 1, 8);
    CHECK_NOTHROW(s.validate());
    s.data(3, 2) = std::nan("");
    CHECK_THROWS_AS(s.validate(), DataError);
    SkeletonSequence short_seq = make_seq(10, 5, 1, 9);
    CHECK_THROWS_AS(short_seq.validate(), DataError);
}

TEST_CASE("stream kind string round trip") {
    for (auto k : {StreamKind::joint, StreamKind::motion, StreamKind::bone})
        CHECK(stream_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(stream_kind_from_string("nope"), ConfigError);
}
