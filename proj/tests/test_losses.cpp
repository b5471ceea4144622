#include "doctest.h"

#include <cmath>

#include "c2vl/losses.hpp"
#include "test_util.hpp"

using namespace c2vl;
using Mat = MatX<double>;

namespace {

// Objective with targets FROZEN at the base point: the function whose
// gradient combined_soft_loss_grad reports (teacher side is detached).
double frozen_target_objective(const Mat& raw_s, const Mat& raw_v, const Mat& raw_l,
                               const PairTargets<double>& tv, const PairTargets<double>& tl,
                               const BatchPartition& part, const LossConfig& cfg, double tau) {
    Mat s = row_normalize<double>(raw_s);
    Mat v = row_normalize<double>(raw_v);
    Mat l = row_normalize<double>(raw_l);
    PairLossValue<double> lv = pair_soft_loss<double>(s, v, tv, part, tau, cfg);
    PairLossValue<double> ll = pair_soft_loss<double>(s, l, tl, part, tau, cfg);
    return part.alpha * (lv.intra + ll.intra) + (1.0 - part.alpha) * (lv.inter + ll.inter);
}

struct FdCheck {
    double rel_error;
    double analytic_norm;
};

// Central finite differences of the full objective w.r.t. all three raw
// embedding matrices vs the analytic gradients.
FdCheck gradient_check(int batch, int dim, double alpha, double beta, double tau,
                       std::uint64_t seed, double h = 1e-5) {
    Mat raw_s = c2vl_test::random_matrix(batch, dim, seed);
    Mat raw_v = c2vl_test::random_matrix(batch, dim, seed + 1);
    Mat raw_l = c2vl_test::random_matrix(batch, dim, seed + 2);
    BatchPartition part = partition_batch(batch, alpha);
    LossConfig cfg;
    cfg.beta = beta;

    Mat s = row_normalize<double>(raw_s);
    Mat v = row_normalize<double>(raw_v);
    Mat l = row_normalize<double>(raw_l);
    const double tau_t = cfg.shared_target_temperature ? tau : 1.0;
    PairTargets<double> tv = make_pair_targets<double>(s, v, beta, tau_t);
    PairTargets<double> tl = make_pair_targets<double>(s, l, beta, tau_t);

    CombinedGrads<double> g = combined_soft_loss_grad<double>(s, v, l, part, cfg, tau);
    Mat d_raw_s = row_normalize_backward<double>(raw_s, g.d_s);
    Mat d_raw_v = row_normalize_backward<double>(raw_v, g.d_v);
    Mat d_raw_l = row_normalize_backward<double>(raw_l, g.d_l);

    auto fd_of = [&](Mat* target, const Mat& analytic) {
        double num = 0, den_a = 0, den_f = 0;
        for (Eigen::Index i = 0; i < target->rows(); ++i) {
            for (Eigen::Index j = 0; j < target->cols(); ++j) {
                double orig = (*target)(i, j);
                (*target)(i, j) = orig + h;
                double up = frozen_target_objective(raw_s, raw_v, raw_l, tv, tl, part, cfg, tau);
                (*target)(i, j) = orig - h;
                double dn = frozen_target_objective(raw_s, raw_v, raw_l, tv, tl, part, cfg, tau);
                (*target)(i, j) = orig;
                double fd = (up - dn) / (2 * h);
                num += (fd - analytic(i, j)) * (fd - analytic(i, j));
                den_a += analytic(i, j) * analytic(i, j);
                den_f += fd * fd;
            }
        }
        double denom = std::max(std::sqrt(den_a) + std::sqrt(den_f), 1e-12);
        return std::make_pair(std::sqrt(num) / denom, std::sqrt(den_a));
    };

    auto [es, ns] = fd_of(&raw_s, d_raw_s);
    auto [ev, nv] = fd_of(&raw_v, d_raw_v);
    auto [el, nl] = fd_of(&raw_l, d_raw_l);
    return {std::max({es, ev, el}), ns + nv + nl};
}

}  // namespace

TEST_CASE("cosine logits: self similarity, orthogonality, temperature") {
    Mat eye = Mat::Identity(3, 3);
    Mat z = cosine_logits<double>(eye, eye, 1.0);
    CHECK(z.diagonal().minCoeff() == doctest::Approx(1.0));
    CHECK(std::abs(z(0, 1)) < 1e-15);
    Mat z2 = cosine_logits<double>(eye, eye, 0.07);
    CHECK(z2(0, 0) == doctest::Approx(1.0 / 0.07).epsilon(1e-12));  // ~14.2857
    Mat wrong(3, 4);
    wrong.setZero();
    CHECK_THROWS_AS(cosine_logits<double>(eye, wrong, 1.0), DataError);
    CHECK_THROWS_AS(cosine_logits<double>(eye, eye, 0.0), ConfigError);
}

TEST_CASE("infonce: single-element batch is exactly zero") {
    Mat one = Mat::Ones(1, 4) / 2.0;
    CHECK(infonce_bidirectional<double>(one, one, 0.07) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("infonce: perfect orthonormal pairs match the closed form") {
    Mat s = Mat::Identity(2, 2);
    double loss = infonce_bidirectional<double>(s, s, 0.07);
    double expected = 2.0 * std::log1p(std::exp(-1.0 / 0.07));
    CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
    CHECK(loss < 1e-5);
}

TEST_CASE("infonce: swapped pairs cost about 1/tau per direction") {
    Mat s = Mat::Identity(2, 2);
    Mat v(2, 2);
    v << 0, 1, 1, 0;  // v1 = s2, v2 = s1
    double loss = infonce_bidirectional<double>(s, v, 0.07);
    double per_direction = std::log1p(std::exp(1.0 / 0.07)) ;
    CHECK(loss / 2.0 == doctest::Approx(per_direction).epsilon(1e-12));
    CHECK(loss / 2.0 == doctest::Approx(1.0 / 0.07).epsilon(1e-4));
}

TEST_CASE("infonce rejects an empty batch") {
    Mat empty(0, 4);
    CHECK_THROWS_AS(infonce_bidirectional<double>(empty, empty, 0.07), DataError);
}

TEST_CASE("intra targets: beta zero collapses to the identity") {
    Mat x = c2vl_test::random_unit_rows(6, 8, 11);
    Mat p = intra_targets<double>(x, 0.0, 0.07);
    CHECK((p - Mat::Identity(6, 6)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("intra targets: two identical rows give the 0.9/0.1 blend") {
    Mat x(2, 4);
    x << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
    Mat p = intra_targets<double>(x, 0.2, 1.0);
    CHECK(p(0, 0) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(p(0, 1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(p(1, 0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(p(1, 1) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("intra targets: rows are stochastic and diagonal-dominant at beta 0.2") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Mat x = c2vl_test::random_unit_rows(7, 12, 100 + seed);
        Mat p = intra_targets<double>(x, 0.2, 0.07);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(p.row(i).minCoeff() >= 0.0);
            Eigen::Index am;
            p.row(i).maxCoeff(&am);
            CHECK(am == i);  // (1-beta) identity mass keeps the diagonal on top
        }
    }
}

TEST_CASE("intra targets reject beta outside [0,1]") {
    Mat x = c2vl_test::random_unit_rows(3, 4, 5);
    CHECK_THROWS_AS(intra_targets<double>(x, -0.1, 1.0), ConfigError);
    CHECK_THROWS_AS(intra_targets<double>(x, 1.0001, 1.0), ConfigError);
}

TEST_CASE("inter targets: identical orthonormal batches give e/(e+1) rows") {
    Mat s = Mat::Identity(2, 2);
    auto [q_s2v, q_v2s] = inter_targets<double>(s, s, 1.0);
    double hi = std::exp(1.0) / (std::exp(1.0) + 1.0);  // 0.7311
    double lo = 1.0 / (std::exp(1.0) + 1.0);            // 0.2689
    for (const Mat& q : {q_s2v, q_v2s}) {
        CHECK(q(0, 0) == doctest::Approx(hi).epsilon(1e-9));
        CHECK(q(0, 1) == doctest::Approx(lo).epsilon(1e-9));
        CHECK(q(1, 1) == doctest::Approx(hi).epsilon(1e-9));
    }
}

TEST_CASE("inter targets: the row-constant middle term never changes the softmax") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Mat s = c2vl_test::random_unit_rows(6, 8, 200 + seed);
        Mat v = c2vl_test::random_unit_rows(6, 8, 300 + seed);
        double tau_t = 0.07;
        auto [q_s2v, q_v2s] = inter_targets<double>(s, v, tau_t);
        // rebuild without the row-constant term
        Mat sv = s * v.transpose();
        Eigen::VectorXd d = sv.diagonal();
        Mat logits_v2s = sv;
        logits_v2s.rowwise() += d.transpose();  // only the column-dependent term
        Mat logits_s2v = sv.transpose();
        logits_s2v.rowwise() += d.transpose();
        Mat q2_v2s = row_softmax<double>(Mat(logits_v2s / tau_t));
        Mat q2_s2v = row_softmax<double>(Mat(logits_s2v / tau_t));
        CHECK((q_v2s - q2_v2s).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((q_s2v - q2_s2v).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("inter targets: rows are stochastic") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Mat s = c2vl_test::random_unit_rows(5, 9, 400 + seed);
        Mat v = c2vl_test::random_unit_rows(5, 9, 500 + seed);
        auto [q_s2v, q_v2s] = inter_targets<double>(s, v, 0.07);
        for (Eigen::Index i = 0; i < 5; ++i) {
            CHECK(q_s2v.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(q_v2s.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    Mat bad(4, 9);
    bad.setZero();
    Mat s = c2vl_test::random_unit_rows(5, 9, 1);
    CHECK_THROWS_AS(inter_targets<double>(s, bad, 0.07), DataError);
}

TEST_CASE("soft cross entropy: matching distribution gives its mean row entropy") {
    Mat z = c2vl_test::random_matrix(5, 7, 42);
    Mat p = row_softmax<double>(z);
    double ce = soft_cross_entropy<double>(p, z);
    // independent entropy computation
    double entropy = 0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j)
            entropy -= p(i, j) * std::log(p(i, j));
    entropy /= static_cast<double>(p.rows());
    CHECK(ce == doctest::Approx(entropy).epsilon(1e-10));
}

TEST_CASE("soft cross entropy: identity targets reproduce one infonce direction") {
    Mat s = c2vl_test::random_unit_rows(4, 6, 7);
    Mat eye = Mat::Identity(4, 4);
    double half = soft_cross_entropy<double>(eye, cosine_logits<double>(s, s, 0.07));
    double full = infonce_bidirectional<double>(s, s, 0.07);
    CHECK(2.0 * half == doctest::Approx(full).epsilon(1e-12));
    // perfect diagonal logits drive the loss under 1e-5
    Mat perfect = Mat::Identity(3, 3);
    double v = soft_cross_entropy<double>(Mat::Identity(3, 3),
                                          cosine_logits<double>(perfect, perfect, 0.07));
    CHECK(v < 1e-5);
}

TEST_CASE("soft cross entropy: single cell is zero, bad targets rejected") {
    Mat p(1, 1), z(1, 1);
    p << 1.0;
    z << 3.7;
    CHECK(soft_cross_entropy<double>(p, z) == doctest::Approx(0.0).epsilon(1e-15));
    Mat bad(2, 2);
    bad << 0.5, 0.6, 0.5, 0.5;  // first row sums to 1.1
    CHECK_THROWS_AS(soft_cross_entropy<double>(bad, Mat::Zero(2, 2)), DataError);
    CHECK_THROWS_AS(soft_cross_entropy<double>(Mat::Identity(2, 2), Mat::Zero(3, 3)), DataError);
}

TEST_CASE("combined loss with alpha=1 beta=0 equals summed infonce") {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        int b = 2 + static_cast<int>(seed % 7);
        int d = 4 + static_cast<int>(seed % 5) * 3;
        Mat s = c2vl_test::random_unit_rows(b, d, 1000 + seed);
        Mat v = c2vl_test::random_unit_rows(b, d, 2000 + seed);
        Mat l = c2vl_test::random_unit_rows(b, d, 3000 + seed);
        LossConfig cfg;
        cfg.beta = 0.0;
        double tau = 0.07;
        LossBreakdown<double> out =
            combined_soft_loss<double>(s, v, l, partition_batch(b, 1.0), cfg, tau);
        double expected = infonce_bidirectional<double>(s, v, tau) +
                          infonce_bidirectional<double>(s, l, tau);
        CHECK(std::abs(out.total - expected) < 1e-9);
    }
}

TEST_CASE("combined loss: B=1 perfect pairs vanish; alpha=0 empties intra") {
    Mat e = Mat::Ones(1, 4) / 2.0;
    LossConfig cfg;
    LossBreakdown<double> out =
        combined_soft_loss<double>(e, e, e, partition_batch(1, 1.0), cfg, 0.07);
    CHECK(out.total == doctest::Approx(0.0).epsilon(1e-12));

    Mat s = c2vl_test::random_unit_rows(4, 6, 1);
    LossBreakdown<double> z =
        combined_soft_loss<double>(s, s, s, partition_batch(4, 0.0), cfg, 0.07);
    CHECK(z.sv_intra == 0.0);
    CHECK(z.sl_intra == 0.0);
    CHECK(z.total == doctest::Approx(z.sv_inter + z.sl_inter).epsilon(1e-12));
}

TEST_CASE("combined loss validates the partition") {
    Mat s = c2vl_test::random_unit_rows(4, 6, 2);
    BatchPartition bad{4, 3, 2, 0.5};  // 3 + 2 != 4
    LossConfig cfg;
    CHECK_THROWS_AS(combined_soft_loss<double>(s, s, s, bad, cfg, 0.07), ConfigError);
}

TEST_CASE("breakdown satisfies total = alpha*intra + (1-alpha)*inter") {
    for (double alpha : {0.0, 0.3, 0.5, 0.9, 1.0}) {
        Mat s = c2vl_test::random_unit_rows(8, 10, 77);
        Mat v = c2vl_test::random_unit_rows(8, 10, 78);
        Mat l = c2vl_test::random_unit_rows(8, 10, 79);
        LossConfig cfg;
        LossBreakdown<double> out =
            combined_soft_loss<double>(s, v, l, partition_batch(8, alpha), cfg, 0.07);
        double recon = out.alpha * (out.sv_intra + out.sl_intra) +
                       (1.0 - out.alpha) * (out.sv_inter + out.sl_inter);
        CHECK(out.total == doctest::Approx(recon).epsilon(1e-9));
    }
}

TEST_CASE("loss is symmetric under exchanging the pair roles") {
    Mat s = c2vl_test::random_unit_rows(6, 8, 81);
    Mat v = c2vl_test::random_unit_rows(6, 8, 82);
    BatchPartition part = partition_batch(6, 0.5);
    LossConfig cfg;
    double tau = 0.07;
    PairTargets<double> t1 = make_pair_targets<double>(s, v, cfg.beta, tau);
    PairTargets<double> t2 = make_pair_targets<double>(v, s, cfg.beta, tau);
    PairLossValue<double> a = pair_soft_loss<double>(s, v, t1, part, tau, cfg);
    PairLossValue<double> b = pair_soft_loss<double>(v, s, t2, part, tau, cfg);
    CHECK(a.intra == doctest::Approx(b.intra).epsilon(1e-9));
    CHECK(a.inter == doctest::Approx(b.inter).epsilon(1e-9));
}

TEST_CASE("loss is invariant to permutations within each subset") {
    Mat s = c2vl_test::random_unit_rows(8, 10, 91);
    Mat v = c2vl_test::random_unit_rows(8, 10, 92);
    Mat l = c2vl_test::random_unit_rows(8, 10, 93);
    BatchPartition part = partition_batch(8, 0.5);  // 4 + 4
    LossConfig cfg;
    LossBreakdown<double> base = combined_soft_loss<double>(s, v, l, part, cfg, 0.07);

    // permute within the intra block and within the inter block
    std::vector<int> perm = {2, 0, 3, 1, 6, 7, 4, 5};
    Mat ps(8, 10), pv(8, 10), pl(8, 10);
    for (int i = 0; i < 8; ++i) {
        ps.row(i) = s.row(perm[i]);
        pv.row(i) = v.row(perm[i]);
        pl.row(i) = l.row(perm[i]);
    }
    LossBreakdown<double> permuted = combined_soft_loss<double>(ps, pv, pl, part, cfg, 0.07);
    CHECK(permuted.total == doctest::Approx(base.total).epsilon(1e-9));
    CHECK(permuted.sv_intra == doctest::Approx(base.sv_intra).epsilon(1e-9));
    CHECK(permuted.sl_inter == doctest::Approx(base.sl_inter).epsilon(1e-9));
}

TEST_CASE("analytic gradients match finite differences") {
    for (double alpha : {0.0, 0.5, 1.0}) {
        for (double beta : {0.0, 0.2}) {
            FdCheck c = gradient_check(5, 8, alpha, beta, 0.07, 4242);
            INFO("alpha=", alpha, " beta=", beta, " rel=", c.rel_error);
            CHECK(c.rel_error < 1e-4);
            CHECK(c.analytic_norm > 0.0);
        }
    }
}

TEST_CASE("temperature gradient matches finite differences") {
    Mat s = c2vl_test::random_unit_rows(6, 8, 11);
    Mat v = c2vl_test::random_unit_rows(6, 8, 12);
    Mat l = c2vl_test::random_unit_rows(6, 8, 13);
    BatchPartition part = partition_batch(6, 0.5);
    LossConfig cfg;
    cfg.shared_target_temperature = false;  // keep targets fixed as tau moves
    double tau0 = 0.07;
    PairTargets<double> tv = make_pair_targets<double>(s, v, cfg.beta, 1.0);
    PairTargets<double> tl = make_pair_targets<double>(s, l, cfg.beta, 1.0);

    CombinedGrads<double> g = combined_soft_loss_grad<double>(s, v, l, part, cfg, tau0);
    const double h = 1e-6;
    auto value_at = [&](double log_tau) {
        double tau = std::exp(log_tau);
        PairLossValue<double> lv = pair_soft_loss<double>(s, v, tv, part, tau, cfg);
        PairLossValue<double> ll = pair_soft_loss<double>(s, l, tl, part, tau, cfg);
        return part.alpha * (lv.intra + ll.intra) + (1 - part.alpha) * (lv.inter + ll.inter);
    };
    double fd = (value_at(std::log(tau0) + h) - value_at(std::log(tau0) - h)) / (2 * h);
    CHECK(g.d_log_tau == doctest::Approx(fd).epsilon(1e-5));
}

TEST_CASE("row normalize: unit rows, zero-row guard, backward check") {
    Mat x = c2vl_test::random_matrix(5, 7, 21);
    Mat y = row_normalize<double>(x);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(y.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));

    Mat z = Mat::Zero(2, 4);
    Mat yz = row_normalize<double>(z);
    CHECK(yz.allFinite());
    CHECK(yz.cwiseAbs().maxCoeff() == 0.0);

    // backward vs finite differences through a fixed linear functional
    Mat r = c2vl_test::random_matrix(5, 7, 22);
    Mat dy = r;
    Mat dx = row_normalize_backward<double>(x, dy);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < 2; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) {
            Mat xp = x, xm = x;
            xp(i, j) += h;
            xm(i, j) -= h;
            double fd = ((row_normalize<double>(xp) - row_normalize<double>(xm)).cwiseProduct(r))
                            .sum() / (2 * h);
            CHECK(dx(i, j) == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}
