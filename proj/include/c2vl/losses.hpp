#pragma once

// Soft cross-modal alignment kernels. Everything here is a pure function of
// its inputs; matrices follow the row-per-sample convention (B x d embeddings,
// rows x B targets/logits). Target matrices play the teacher role and never
// receive gradients: the *_grad entry points differentiate the student logits
// path only.

#include <Eigen/Core>
#include <cmath>
#include <utility>

#include "c2vl/common.hpp"
#include "c2vl/schedule.hpp"

namespace c2vl {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct LossConfig {
    double beta = 0.2;                     // identity/self-similarity blend in intra targets
    bool shared_target_temperature = true; // false reproduces the literal unit-temperature targets
    double log_floor = 1e-12;              // probability floor inside cross-entropy logs
};

// ---------------------------------------------------------------------------
// Elementary pieces
// ---------------------------------------------------------------------------

// x / (||x|| + eps) per row. Zero rows stay zero instead of producing NaN.
template <class S>
MatX<S> row_normalize(const MatX<S>& x, S eps = S(1e-12)) {
    Eigen::Array<S, Eigen::Dynamic, 1> n = x.rowwise().norm().array() + eps;
    return (x.array().colwise() / n).matrix();
}

// Pullback of row_normalize: given dL/dy for y = x/(||x||+eps), return dL/dx.
template <class S>
MatX<S> row_normalize_backward(const MatX<S>& x, const MatX<S>& dy, S eps = S(1e-12)) {
    MatX<S> dx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S r = x.row(i).norm();
        S n = r + eps;
        dx.row(i) = dy.row(i) / n;
        if (r > S(0)) {
            S proj = x.row(i).dot(dy.row(i));
            dx.row(i) -= x.row(i) * (proj / (n * n * r));
        }
    }
    return dx;
}

template <class S>
MatX<S> row_softmax(const MatX<S>& z) {
    MatX<S> shifted = z.colwise() - z.rowwise().maxCoeff();
    Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic> e = shifted.array().exp();
    Eigen::Array<S, Eigen::Dynamic, 1> sums = e.rowwise().sum();
    return (e.colwise() / sums).matrix();
}

template <class S>
MatX<S> row_log_softmax(const MatX<S>& z) {
    MatX<S> shifted = z.colwise() - z.rowwise().maxCoeff();
    VecX<S> lse = shifted.array().exp().rowwise().sum().log().matrix();
    return shifted.colwise() - lse;
}

// Temperature-scaled similarity logits: entry (i,j) = <a_i, b_j> / tau.
// With unit-norm rows these are cosine similarities over tau.
template <class S>
MatX<S> cosine_logits(const MatX<S>& a, const MatX<S>& b, S tau) {
    if (a.cols() != b.cols())
        throw DataError("cosine_logits: dim mismatch (" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.cols()) + ")");
    if (!(tau > S(0))) throw ConfigError("cosine_logits: tau must be positive");
    return a * b.transpose() / tau;
}

// Mean-over-rows soft cross entropy: -(1/rows) sum_ij P_ij log rho(Z)_ij,
// with the log floored at log(log_floor). Empty inputs contribute zero.
template <class S>
S soft_cross_entropy(const MatX<S>& p, const MatX<S>& z, S log_floor = S(1e-12)) {
    if (p.rows() != z.rows() || p.cols() != z.cols())
        throw DataError("soft_cross_entropy: target/logit shape mismatch");
    if (p.rows() == 0) return S(0);
    VecX<S> row_sums = p.rowwise().sum();
    for (Eigen::Index i = 0; i < row_sums.size(); ++i) {
        if (std::abs(row_sums(i) - S(1)) > S(1e-4))
            throw DataError("soft_cross_entropy: target row " + std::to_string(i) +
                            " sums to " + std::to_string(static_cast<double>(row_sums(i))));
    }
    MatX<S> logp = row_log_softmax(z).cwiseMax(std::log(log_floor));
    return -(p.cwiseProduct(logp)).sum() / static_cast<S>(p.rows());
}

// dL/dZ of soft_cross_entropy: (rho(Z) - P) / rows.
template <class S>
MatX<S> soft_cross_entropy_grad(const MatX<S>& p, const MatX<S>& z) {
    return (row_softmax(z) - p) / static_cast<S>(p.rows());
}

// Bidirectional InfoNCE with identity targets:
// H(I, rho(SV^T/tau)) + H(I, rho(VS^T/tau)), each term averaged over rows.
template <class S>
S infonce_bidirectional(const MatX<S>& s, const MatX<S>& v, S tau, S log_floor = S(1e-12)) {
    if (s.rows() == 0) throw DataError("infonce_bidirectional: empty batch");
    if (s.rows() != v.rows() || s.cols() != v.cols())
        throw DataError("infonce_bidirectional: shape mismatch");
    MatX<S> eye = MatX<S>::Identity(s.rows(), s.rows());
    return soft_cross_entropy(eye, cosine_logits(s, v, tau), log_floor) +
           soft_cross_entropy(eye, cosine_logits(v, s, tau), log_floor);
}

// ---------------------------------------------------------------------------
// Soft targets
// ---------------------------------------------------------------------------

// Intra-modal self-similarity target: P = beta * rho(XX^T/tau_t) + (1-beta) I.
// Row-stochastic by construction; the diagonal keeps at least (1-beta) mass.
template <class S>
MatX<S> intra_targets(const MatX<S>& x, S beta, S tau_t) {
    if (beta < S(0) || beta > S(1)) throw ConfigError("intra_targets: beta must be in [0,1]");
    MatX<S> p = beta * row_softmax(cosine_logits(x, x, tau_t));
    p.diagonal().array() += S(1) - beta;
    return p;
}

// Inter-modal cross-consistency targets for one (X, Y) pair, as row-softmaxes
// of XY^T plus the positive-pair diagonal broadcast along both axes:
//   q_y2x(i,j) = rho_row( (<x_i,y_j> + <x_i,y_i> + <x_j,y_j>) / tau_t )
//   q_x2y(i,j) = rho_row( (<y_i,x_j> + <x_i,y_i> + <x_j,y_j>) / tau_t )
// The row-constant middle term cancels under the row softmax; it is kept so
// the computed logits match their algebraic definition.
template <class S>
std::pair<MatX<S>, MatX<S>> inter_targets(const MatX<S>& x, const MatX<S>& y, S tau_t) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw DataError("inter_targets: shape mismatch");
    MatX<S> xy = x * y.transpose();
    VecX<S> d = xy.diagonal();
    MatX<S> logits_y2x = xy;
    logits_y2x.colwise() += d;
    logits_y2x.rowwise() += d.transpose();
    MatX<S> logits_x2y = xy.transpose();
    logits_x2y.colwise() += d;
    logits_x2y.rowwise() += d.transpose();
    return {row_softmax(MatX<S>(logits_x2y / tau_t)), row_softmax(MatX<S>(logits_y2x / tau_t))};
}

// Teacher-side targets for one skeleton/prompt pair. x is the student-side
// modality, y the frozen prompt modality; both are detached values.
template <class S>
struct PairTargets {
    MatX<S> p_x2y, p_y2x;  // intra-modal, identity-blended
    MatX<S> q_x2y, q_y2x;  // inter-modal cross-consistency
};

template <class S>
PairTargets<S> make_pair_targets(const MatX<S>& x, const MatX<S>& y, S beta, S tau_t) {
    PairTargets<S> t;
    t.p_x2y = intra_targets(x, beta, tau_t);
    t.p_y2x = intra_targets(y, beta, tau_t);
    auto q = inter_targets(x, y, tau_t);
    t.q_x2y = std::move(q.first);
    t.q_y2x = std::move(q.second);
    return t;
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

template <class S>
struct LossBreakdown {
    S total = S(0);
    S sv_intra = S(0), sv_inter = S(0);  // unweighted component values
    S sl_intra = S(0), sl_inter = S(0);
    S alpha = S(1), beta = S(0), tau = S(1);
};

template <class S>
struct PairLossValue {
    S intra = S(0);
    S inter = S(0);
};

template <class S>
struct PairGrads {
    MatX<S> d_x, d_y;
    S d_log_tau = S(0);
    PairLossValue<S> value;
};

namespace detail {

// One directed cross-entropy term H(P, rho(X_rows Y^T / tau)) over the row
// range [r0, r0+m). Returns the unweighted value; gradient contributions are
// scaled by `weight` and accumulated into the callers' buffers.
template <class S>
S directed_term(const MatX<S>& x, const MatX<S>& y, const MatX<S>& p_full, Eigen::Index r0,
                Eigen::Index m, S tau, S weight, S log_floor, MatX<S>* dx, MatX<S>* dy,
                S* d_log_tau) {
    if (m == 0) return S(0);
    MatX<S> p = p_full.middleRows(r0, m);
    MatX<S> z = x.middleRows(r0, m) * y.transpose() / tau;
    S value = soft_cross_entropy(p, z, log_floor);
    if (dx != nullptr) {
        MatX<S> dz = weight * soft_cross_entropy_grad(p, z);
        dx->middleRows(r0, m) += dz * y / tau;
        *dy += dz.transpose() * x.middleRows(r0, m) / tau;
        // z = m/tau with m fixed, so dL/dlog(tau) = -sum(dz .* z)
        *d_log_tau -= dz.cwiseProduct(z).sum();
    }
    return value;
}

template <class S>
void check_pair(const MatX<S>& x, const MatX<S>& y, const BatchPartition& part) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw DataError("soft loss: embedding shape mismatch");
    if (part.intra < 0 || part.inter < 0 || part.intra + part.inter != part.batch ||
        part.batch != static_cast<int>(x.rows()))
        throw ConfigError("soft loss: partition inconsistent with batch (" +
                          std::to_string(part.intra) + "+" + std::to_string(part.inter) +
                          " != " + std::to_string(x.rows()) + ")");
}

}  // namespace detail

// Loss of one pair for precomputed targets: intra terms over the first
// part.intra rows against the P targets, inter terms over the remaining rows
// against the Q targets. Values are returned unweighted; gradients carry the
// alpha / (1-alpha) weights of the final objective.
template <class S>
PairLossValue<S> pair_soft_loss(const MatX<S>& x, const MatX<S>& y, const PairTargets<S>& t,
                                const BatchPartition& part, S tau,
                                const LossConfig& cfg = LossConfig{}) {
    detail::check_pair(x, y, part);
    const S floor = static_cast<S>(cfg.log_floor);
    PairLossValue<S> v;
    v.intra = detail::directed_term<S>(x, y, t.p_x2y, 0, part.intra, tau, S(0), floor,
                                       nullptr, nullptr, nullptr) +
              detail::directed_term<S>(y, x, t.p_y2x, 0, part.intra, tau, S(0), floor,
                                       nullptr, nullptr, nullptr);
    v.inter = detail::directed_term<S>(x, y, t.q_x2y, part.intra, part.inter, tau, S(0), floor,
                                       nullptr, nullptr, nullptr) +
              detail::directed_term<S>(y, x, t.q_y2x, part.intra, part.inter, tau, S(0), floor,
                                       nullptr, nullptr, nullptr);
    return v;
}

template <class S>
PairGrads<S> pair_soft_loss_grad(const MatX<S>& x, const MatX<S>& y, const PairTargets<S>& t,
                                 const BatchPartition& part, S tau,
                                 const LossConfig& cfg = LossConfig{}) {
    detail::check_pair(x, y, part);
    const S floor = static_cast<S>(cfg.log_floor);
    const S a = static_cast<S>(part.alpha);
    PairGrads<S> g;
    g.d_x = MatX<S>::Zero(x.rows(), x.cols());
    g.d_y = MatX<S>::Zero(y.rows(), y.cols());
    g.value.intra =
        detail::directed_term<S>(x, y, t.p_x2y, 0, part.intra, tau, a, floor, &g.d_x, &g.d_y,
                                 &g.d_log_tau) +
        detail::directed_term<S>(y, x, t.p_y2x, 0, part.intra, tau, a, floor, &g.d_y, &g.d_x,
                                 &g.d_log_tau);
    g.value.inter =
        detail::directed_term<S>(x, y, t.q_x2y, part.intra, part.inter, tau, S(1) - a, floor,
                                 &g.d_x, &g.d_y, &g.d_log_tau) +
        detail::directed_term<S>(y, x, t.q_y2x, part.intra, part.inter, tau, S(1) - a, floor,
                                 &g.d_y, &g.d_x, &g.d_log_tau);
    return g;
}

// Full progressive objective over skeleton/vision/language embeddings:
//   total = alpha * (sv_intra + sl_intra) + (1 - alpha) * (sv_inter + sl_inter)
// Targets are rebuilt from the (detached) inputs on every call.
template <class S>
LossBreakdown<S> combined_soft_loss(const MatX<S>& s, const MatX<S>& v, const MatX<S>& l,
                                    const BatchPartition& part, const LossConfig& cfg, S tau) {
    if (s.rows() != l.rows() || s.cols() != l.cols())
        throw DataError("combined_soft_loss: S/L shape mismatch");
    const S beta = static_cast<S>(cfg.beta);
    const S tau_t = cfg.shared_target_temperature ? tau : S(1);
    PairTargets<S> sv = make_pair_targets(s, v, beta, tau_t);
    PairTargets<S> sl = make_pair_targets(s, l, beta, tau_t);

    LossBreakdown<S> out;
    PairLossValue<S> lv = pair_soft_loss(s, v, sv, part, tau, cfg);
    PairLossValue<S> ll = pair_soft_loss(s, l, sl, part, tau, cfg);
    out.sv_intra = lv.intra;
    out.sv_inter = lv.inter;
    out.sl_intra = ll.intra;
    out.sl_inter = ll.inter;
    out.alpha = static_cast<S>(part.alpha);
    out.beta = beta;
    out.tau = tau;
    out.total = out.alpha * (out.sv_intra + out.sl_intra) +
                (S(1) - out.alpha) * (out.sv_inter + out.sl_inter);
    return out;
}

template <class S>
struct CombinedGrads {
    MatX<S> d_s, d_v, d_l;
    S d_log_tau = S(0);
    LossBreakdown<S> breakdown;
};

template <class S>
CombinedGrads<S> combined_soft_loss_grad(const MatX<S>& s, const MatX<S>& v, const MatX<S>& l,
                                         const BatchPartition& part, const LossConfig& cfg,
                                         S tau) {
    if (s.rows() != l.rows() || s.cols() != l.cols())
        throw DataError("combined_soft_loss: S/L shape mismatch");
    const S beta = static_cast<S>(cfg.beta);
    const S tau_t = cfg.shared_target_temperature ? tau : S(1);
    PairTargets<S> sv = make_pair_targets(s, v, beta, tau_t);
    PairTargets<S> sl = make_pair_targets(s, l, beta, tau_t);

    PairGrads<S> gv = pair_soft_loss_grad(s, v, sv, part, tau, cfg);
    PairGrads<S> gl = pair_soft_loss_grad(s, l, sl, part, tau, cfg);

    CombinedGrads<S> out;
    out.d_s = gv.d_x + gl.d_x;
    out.d_v = std::move(gv.d_y);
    out.d_l = std::move(gl.d_y);
    out.d_log_tau = gv.d_log_tau + gl.d_log_tau;
    out.breakdown.sv_intra = gv.value.intra;
    out.breakdown.sv_inter = gv.value.inter;
    out.breakdown.sl_intra = gl.value.intra;
    out.breakdown.sl_inter = gl.value.inter;
    out.breakdown.alpha = static_cast<S>(part.alpha);
    out.breakdown.beta = beta;
    out.breakdown.tau = tau;
    out.breakdown.total =
        out.breakdown.alpha * (out.breakdown.sv_intra + out.breakdown.sl_intra) +
        (S(1) - out.breakdown.alpha) * (out.breakdown.sv_inter + out.breakdown.sl_inter);
    return out;
}

}  // namespace c2vl
