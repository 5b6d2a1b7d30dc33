#pragma once

#include <vector>

#include "xsketch/autodiff.hpp"
#include "xsketch/polyfit.hpp"
#include "xsketch/rng.hpp"
#include "xsketch/seqcvae.hpp"

// Self-supervised signals and the four latent-regularization losses.
// Planning signal: per-attribute polynomial fit of the chordwise features.
// Structure signal: sign of the residual around that fit.
namespace xsketch::regularizers {

using ad::Tape;
using ad::Var;
using seqcvae::ModelState;

struct PlanningSignal {
    Mat values;  // C x 3, least-squares evaluation at the fit abscissae
    Mat coeffs;  // 3 x (degree+1), ascending powers
};

inline PlanningSignal fit_planning_signal(const Mat& k, int degree) {
    PlanningSignal s;
    s.values = polyfit_columns(k, degree, &s.coeffs);
    return s;
}

inline Mat structure_signal(const Mat& k, const Mat& i_pln) {
    if (k.rows() != i_pln.rows() || k.cols() != i_pln.cols())
        throw DataError("structure_signal: shape mismatch");
    return (k - i_pln).unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// ---- discriminators ----------------------------------------------------------

// per-chord two-layer perceptron over one attribute block of z_pln
inline Var disc_pln_forward(ModelState& model, Tape& t, Var z_pln, int attr) {
    using namespace ad;
    const int bd = model.config.block_dim();
    const std::string base = "disc_pln.a" + std::to_string(attr);
    Var z_a = cols(z_pln, attr * bd, bd);
    Var hidden = tanh_(add_rowvec(matmul(z_a, t.leaf(model.param(base + ".W1"))),
                                  t.leaf(model.param(base + ".b1"))));
    return add_rowvec(matmul(hidden, t.leaf(model.param(base + ".W2"))),
                      t.leaf(model.param(base + ".b2")));
}

// per-chord perceptron predicting the full 3-column structure signal, bounded
inline Var disc_str_forward(ModelState& model, Tape& t, Var z_str) {
    using namespace ad;
    Var hidden = tanh_(add_rowvec(matmul(z_str, t.leaf(model.param("disc_str.W1"))),
                                  t.leaf(model.param("disc_str.b1"))));
    return tanh_(add_rowvec(matmul(hidden, t.leaf(model.param("disc_str.W2"))),
                            t.leaf(model.param("disc_str.b2"))));
}

// ---- prediction-task losses ----------------------------------------------------

inline Var loss_pln(ModelState& model, Tape& t, Var z_pln, const Mat& i_pln) {
    using namespace ad;
    Var acc = t.constant(Mat::Zero(1, 1));
    for (int a = 0; a < kNumAttrs; ++a) {
        Var pred = disc_pln_forward(model, t, z_pln, a);
        acc = add(acc, mse(pred, t.constant(i_pln.col(a))));
    }
    return scale(acc, 1.0 / kNumAttrs);
}

inline Var loss_str(ModelState& model, Tape& t, Var z_str, const Mat& i_str) {
    return ad::mse(disc_str_forward(model, t, z_str), t.constant(i_str));
}

// ---- factorization loss ----------------------------------------------------------

// Samples z_pln from the posterior and z~_str from the prior rollout (both
// detached), free-runs the decoder, re-encodes the output and predicts the
// planning signal from the re-inferred latent. Gradients flow through the
// autoregressive chain and the re-encoding activations; harvest with
// ModelState::is_generator so only decoder parameters are updated.
inline Var loss_fac(ModelState& model, Tape& t, const Mat& x, const Eigen::MatrixXi& y,
                    const std::vector<int>& sizes, const Mat& i_pln, uint64_t seed) {
    using namespace ad;
    auto enc = model.encode(t, t.constant(x), y, sizes);
    RandomStream rng_pln(derive_seed(seed, "fac_pln"));
    Var z_pln = detach(ModelState::reparameterize(t, enc.post_pln, rng_pln));
    RandomStream rng_str(derive_seed(seed, "fac_str"));
    auto roll = model.prior_rollout(t, enc.cond.y_chd, rng_str, 0.0, /*detached=*/true);
    auto dec = model.decode(t, z_pln, roll.z, enc.cond, nullptr);

    auto re_enc = model.encode(t, dec.xhat, y, sizes);
    RandomStream rng_re(derive_seed(seed, "fac_re"));
    Var z_re = ModelState::reparameterize(t, re_enc.post_pln, rng_re);

    Var acc = t.constant(Mat::Zero(1, 1));
    for (int a = 0; a < kNumAttrs; ++a) {
        Var pred = disc_pln_forward(model, t, z_re, a);
        acc = add(acc, mse(pred, t.constant(i_pln.col(a))));
    }
    return scale(acc, 1.0 / kNumAttrs);
}

// ---- attribute alignment loss -------------------------------------------------------

// One pooled sample for the pairwise alignment loss: the fader-dimension
// value of one chord (Var) and that chord's attribute value (constant).
struct RegBatch {
    std::vector<Var> latent;       // each 1x1
    std::vector<double> attribute;
};

// mean over ordered pairs i != j of (tanh(d_i - d_j) - sign(a_i - a_j))^2,
// subsampled to at most max_items items
inline Var loss_reg_single(Tape& t, const RegBatch& b, int max_items, uint64_t seed) {
    using namespace ad;
    const int total = static_cast<int>(b.latent.size());
    if (total < 2) return t.constant(Mat::Zero(1, 1));

    std::vector<int> pick(total);
    std::iota(pick.begin(), pick.end(), 0);
    if (total > max_items) {  // Fisher-Yates prefix
        RandomStream rng(derive_seed(seed, "reg_subsample"));
        for (int i = 0; i < max_items; ++i) {
            const int j = i + static_cast<int>(rng.uniform_index(total - i));
            std::swap(pick[i], pick[j]);
        }
        pick.resize(max_items);
    }
    const int s = static_cast<int>(pick.size());

    std::vector<Var> rows_v;
    rows_v.reserve(s);
    Mat a_vals(s, 1);
    for (int i = 0; i < s; ++i) {
        rows_v.push_back(b.latent[pick[i]]);
        a_vals(i, 0) = b.attribute[pick[i]];
    }
    Var d = concat_rows(rows_v);          // s x 1
    Var diff = tanh_(pairwise_diff(d));   // s x s
    Mat sign_a(s, s);
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) {
            const double v = a_vals(i, 0) - a_vals(j, 0);
            sign_a(i, j) = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        }
    // diagonal terms are exactly zero; rescale the full-matrix mean to the
    // off-diagonal pair count
    Var full = mse(diff, t.constant(sign_a));
    return scale(full, static_cast<double>(s) / (s - 1));
}

// batches pooled across excerpts, one RegBatch per attribute
inline Var loss_reg(Tape& t, const std::array<RegBatch, kNumAttrs>& batches, int max_items,
                    uint64_t seed) {
    using namespace ad;
    Var acc = t.constant(Mat::Zero(1, 1));
    for (int a = 0; a < kNumAttrs; ++a)
        acc = add(acc, loss_reg_single(t, batches[a], max_items, derive_seed(seed, "attr", a)));
    return scale(acc, 1.0 / kNumAttrs);
}

}  // namespace xsketch::regularizers
