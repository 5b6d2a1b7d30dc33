#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xsketch/autodiff.hpp"
#include "xsketch/common.hpp"
#include "xsketch/notedata.hpp"
#include "xsketch/rng.hpp"

// Conditional sequential VAE over chordwise latents: a planning latent with a
// standard-normal prior encoded bidirectionally from performance embeddings
// alone, and a structural latent with a learned unidirectional sequential
// prior conditioned on chordwise score embeddings. Decoding runs in two
// steps: a chordwise recurrence emitting an intermediate chordwise output,
// then an autoregressive notewise recurrence over the broadcast activation.
namespace xsketch::seqcvae {

using ad::Param;
using ad::Tape;
using ad::Var;

enum class Arch { hierarchical, notewise, cvae };

inline std::string arch_name(Arch a) {
    switch (a) {
        case Arch::notewise: return "notewise";
        case Arch::cvae: return "cvae";
        default: return "hierarchical";
    }
}
inline Arch arch_from_name(const std::string& s) {
    if (s == "notewise") return Arch::notewise;
    if (s == "cvae") return Arch::cvae;
    if (s == "hierarchical") return Arch::hierarchical;
    throw DataError("unknown arch: " + s);
}

struct Lambdas {
    double pln = 1000.0;
    double str = 100.0;
    double fac = 1.0;
    double reg = 10.0;
};

struct ModelConfig {
    int d_pln = 12;        // divisible by the 3 attributes; 4 dims per block
    int d_str = 64;
    int hidden = 256;
    int perf_embed = 256;
    int score_embed = 128;  // 8 lookup tables of equal width
    int disc_hidden = 64;
    int degree = 4;         // planning-signal polynomial degree
    double trunc_threshold = 2.0;
    uint64_t seed = 1;
    std::string profile = "paper";
    Arch arch = Arch::hierarchical;
    Lambdas lambdas;

    int block_dim() const { return d_pln / kNumAttrs; }
    int fader_dim(int attr) const { return attr * block_dim(); }  // dim 0 of each block

    void validate() const {
        if (d_pln % kNumAttrs != 0) throw DataError("d_pln must be divisible by 3");
        if (score_embed % notedata::kScoreFeatureCount != 0)
            throw DataError("score_embed must be divisible by 8");
        if (d_pln <= 0 || d_str <= 0 || hidden <= 0 || perf_embed <= 0 || disc_hidden <= 0)
            throw DataError("non-positive model dimension");
    }

    static ModelConfig paper_profile() { return ModelConfig{}; }

    static ModelConfig desk_profile() {
        ModelConfig c;
        c.perf_embed = 32;
        c.score_embed = 16;
        c.d_str = 16;
        c.hidden = 32;
        c.disc_hidden = 16;
        c.profile = "desk";
        return c;
    }

    // small enough for full finite-difference sweeps (< 2k parameters)
    static ModelConfig gradcheck_profile() {
        ModelConfig c;
        c.perf_embed = 4;
        c.score_embed = 8;
        c.d_str = 4;
        c.hidden = 4;
        c.disc_hidden = 4;
        c.profile = "gradcheck";
        return c;
    }
};

inline void to_json(nlohmann::json& j, const Lambdas& l) {
    j = {{"pln", l.pln}, {"str", l.str}, {"fac", l.fac}, {"reg", l.reg}};
}
inline void from_json(const nlohmann::json& j, Lambdas& l) {
    l.pln = j.value("pln", 1000.0);
    l.str = j.value("str", 100.0);
    l.fac = j.value("fac", 1.0);
    l.reg = j.value("reg", 10.0);
}
inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"d_pln", c.d_pln},           {"d_str", c.d_str},
         {"hidden", c.hidden},         {"perf_embed", c.perf_embed},
         {"score_embed", c.score_embed}, {"disc_hidden", c.disc_hidden},
         {"degree", c.degree},         {"trunc_threshold", c.trunc_threshold},
         {"seed", c.seed},             {"profile", c.profile},
         {"arch", arch_name(c.arch)},  {"lambdas", c.lambdas}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig defaults;
    c.d_pln = j.value("d_pln", defaults.d_pln);
    c.d_str = j.value("d_str", defaults.d_str);
    c.hidden = j.value("hidden", defaults.hidden);
    c.perf_embed = j.value("perf_embed", defaults.perf_embed);
    c.score_embed = j.value("score_embed", defaults.score_embed);
    c.disc_hidden = j.value("disc_hidden", defaults.disc_hidden);
    c.degree = j.value("degree", defaults.degree);
    c.trunc_threshold = j.value("trunc_threshold", defaults.trunc_threshold);
    c.seed = j.value("seed", defaults.seed);
    c.profile = j.value("profile", defaults.profile);
    c.arch = arch_from_name(j.value("arch", std::string("hierarchical")));
    if (j.contains("lambdas")) c.lambdas = j.at("lambdas").get<Lambdas>();
    c.validate();
}

// parameters are kept float32-representable so the float32 checkpoint
// payload round-trips to bit-identical forward passes
inline void snap_f32(Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

constexpr double kSigmaFloor = 1e-4;

struct GaussianSeq {
    Var mu, sigma;
};

// ---- GRU -------------------------------------------------------------------

struct GruParams {
    Param *Wr, *Ur, *br, *Wu, *Uu, *bu, *Wn, *Un, *bn;
    int input = 0, hidden = 0;
};

struct BoundGru {
    Var Wr, Ur, br, Wu, Uu, bu, Wn, Un, bn;
    int hidden = 0;

    // one recurrence step: x (1 x I), h (1 x H) -> new h
    Var step(Var x, Var h) const {
        using namespace ad;
        Var r = sigmoid(add_rowvec(add(matmul(x, Wr), matmul(h, Ur)), br));
        Var u = sigmoid(add_rowvec(add(matmul(x, Wu), matmul(h, Uu)), bu));
        Var n = tanh_(add_rowvec(add(matmul(x, Wn), matmul(mul(r, h), Un)), bn));
        return add(n, mul(u, sub(h, n)));  // (1-u)*n + u*h
    }

    Var initial_state(Tape& t) const { return t.constant(Mat::Zero(1, hidden)); }
};

struct BoundAffine {
    Var W, b;
    Var apply(Var x) const { return ad::add_rowvec(ad::matmul(x, W), b); }
};

// ---- model state -----------------------------------------------------------

class ModelState {
public:
    ModelConfig config;

    ModelState() = default;
    explicit ModelState(const ModelConfig& cfg) { init(cfg); }

    void init(const ModelConfig& cfg) {
        cfg.validate();
        config = cfg;
        params_.clear();
        index_.clear();

        const int ex = cfg.perf_embed, ey = cfg.score_embed, h = cfg.hidden;
        const int table_w = ey / notedata::kScoreFeatureCount;
        const bool has_pln = cfg.arch != Arch::cvae;
        const int z_cond = has_pln ? cfg.d_pln : kNumAttrs;

        add_param("embed_x.W", 3, ex);
        add_param("embed_x.b", 1, ex);
        for (int i = 0; i < notedata::kScoreFeatureCount; ++i)
            add_param("embed_y.table" + std::to_string(i), notedata::kScoreClassCounts[i], table_w);

        if (has_pln) {
            add_gru("enc_pln.f", ex, h);
            add_gru("enc_pln.b", ex, h);
            add_param("enc_pln.head.W", 2 * h, 2 * cfg.d_pln);
            add_param("enc_pln.head.b", 1, 2 * cfg.d_pln);
        }
        add_gru("enc_str.gru", ex + ey, h);
        add_param("enc_str.head.W", h, 2 * cfg.d_str);
        add_param("enc_str.head.b", 1, 2 * cfg.d_str);

        add_gru("prior.gru", cfg.d_str + ey, h);
        add_param("prior.head.W", h, 2 * cfg.d_str);
        add_param("prior.head.b", 1, 2 * cfg.d_str);

        add_gru("dec_chd.gru", z_cond + cfg.d_str + ey, h);
        add_param("dec_chd.khead.W", h, kNumAttrs);
        add_param("dec_chd.khead.b", 1, kNumAttrs);

        add_gru("dec_note.gru", h + ey + kNumAttrs, h);
        add_param("dec_note.out.W", h, kNumAttrs);
        add_param("dec_note.out.b", 1, kNumAttrs);

        if (has_pln) {
            for (int a = 0; a < kNumAttrs; ++a) {
                const std::string base = "disc_pln.a" + std::to_string(a);
                add_param(base + ".W1", cfg.block_dim(), cfg.disc_hidden);
                add_param(base + ".b1", 1, cfg.disc_hidden);
                add_param(base + ".W2", cfg.disc_hidden, 1);
                add_param(base + ".b2", 1, 1);
            }
        }
        add_param("disc_str.W1", cfg.d_str, cfg.disc_hidden);
        add_param("disc_str.b1", 1, cfg.disc_hidden);
        add_param("disc_str.W2", cfg.disc_hidden, kNumAttrs);
        add_param("disc_str.b2", 1, kNumAttrs);

        initialize_weights();
    }

    std::vector<Param*> params() {
        std::vector<Param*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }
    std::vector<const Param*> params() const {
        std::vector<const Param*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    Param& param(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw DataError("unknown parameter " + name);
        return *params_[it->second];
    }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& p : params_) n += p->count();
        return n;
    }

    static bool is_generator(const Param& p) {
        const auto g = p.group();
        return g == "dec_chd" || g == "dec_note";
    }
    static bool is_encoder(const Param& p) {
        const auto g = p.group();
        return g == "enc_pln" || g == "enc_str" || g == "embed_x";
    }
    static bool is_discriminator(const Param& p) {
        const auto g = p.group();
        return g == "disc_pln" || g == "disc_str";
    }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

    // ---- forward pieces ------------------------------------------------

    struct Condition {
        Var e_y;    // N x E_y
        Var y_chd;  // C x E_y
        std::vector<int> sizes;
    };

    Condition embed_condition(Tape& t, const Eigen::MatrixXi& y, std::vector<int> sizes) {
        using namespace ad;
        const int n = static_cast<int>(y.rows());
        std::vector<Var> parts;
        for (int col = 0; col < notedata::kScoreFeatureCount; ++col) {
            std::vector<int> idx(n);
            for (int r = 0; r < n; ++r) {
                idx[r] = notedata::score_class_index(col, y(r, col));
                if (idx[r] < 0 || idx[r] >= notedata::kScoreClassCounts[col])
                    throw DataError("score feature out of range in column " +
                                    std::string(notedata::kScoreFeatureNames[col]));
            }
            parts.push_back(gather_rows(t.leaf(param("embed_y.table" + std::to_string(col))),
                                        std::move(idx)));
        }
        Condition c;
        c.e_y = concat_cols(parts);
        c.y_chd = segment_mean(c.e_y, sizes);
        c.sizes = std::move(sizes);
        return c;
    }

    struct EncodeOut {
        GaussianSeq post_pln;  // invalid for cvae arch
        GaussianSeq post_str;
        Var x_chd;
        Condition cond;
    };

    // x: N x 3 (Var so that re-encoding model output stays differentiable)
    EncodeOut encode(Tape& t, Var x, const Eigen::MatrixXi& y, const std::vector<int>& sizes) {
        using namespace ad;
        if (t.val(x).rows() != y.rows() || t.val(x).cols() != kNumAttrs)
            throw DataError("encode: feature shape mismatch");
        EncodeOut out;
        out.cond = embed_condition(t, y, sizes);

        Var e_x = add_rowvec(matmul(x, t.leaf(param("embed_x.W"))), t.leaf(param("embed_x.b")));
        out.x_chd = segment_mean(e_x, sizes);
        const int n_chords = static_cast<int>(sizes.size());

        if (config.arch != Arch::cvae) {
            // planning posterior: bidirectional over performance embeddings only
            BoundGru fwd = bind_gru(t, "enc_pln.f");
            BoundGru bwd = bind_gru(t, "enc_pln.b");
            std::vector<Var> hf(n_chords), hb(n_chords);
            Var h = fwd.initial_state(t);
            for (int c = 0; c < n_chords; ++c) hf[c] = h = fwd.step(row(out.x_chd, c), h);
            h = bwd.initial_state(t);
            for (int c = n_chords - 1; c >= 0; --c) hb[c] = h = bwd.step(row(out.x_chd, c), h);
            std::vector<Var> both(n_chords);
            for (int c = 0; c < n_chords; ++c) both[c] = concat_cols({hf[c], hb[c]});
            Var stacked = concat_rows(both);
            Var head = bind_affine(t, "enc_pln.head").apply(stacked);
            out.post_pln = split_gaussian(head, config.d_pln);
        }

        // structural posterior: causal over (x_chd, y_chd)
        Var xy = concat_cols({out.x_chd, out.cond.y_chd});
        BoundGru gru = bind_gru(t, "enc_str.gru");
        std::vector<Var> hs(n_chords);
        Var h = gru.initial_state(t);
        for (int c = 0; c < n_chords; ++c) hs[c] = h = gru.step(row(xy, c), h);
        Var head = bind_affine(t, "enc_str.head").apply(concat_rows(hs));
        out.post_str = split_gaussian(head, config.d_str);
        return out;
    }

    // sequential prior conditioned on posterior-sampled latents (training/KL)
    GaussianSeq prior_teacher(Tape& t, Var y_chd, const std::vector<Var>& z_str_rows) {
        using namespace ad;
        const int n_chords = static_cast<int>(z_str_rows.size());
        BoundGru gru = bind_gru(t, "prior.gru");
        BoundAffine head = bind_affine(t, "prior.head");
        std::vector<Var> hs(n_chords);
        Var h = gru.initial_state(t);
        Var z_prev = t.constant(Mat::Zero(1, config.d_str));
        for (int c = 0; c < n_chords; ++c) {
            hs[c] = h = gru.step(concat_cols({z_prev, row(y_chd, c)}), h);
            z_prev = z_str_rows[c];
        }
        return split_gaussian(head.apply(concat_rows(hs)), config.d_str);
    }

    struct Rollout {
        Var z;  // C x d_str
        GaussianSeq gauss;
        std::vector<Var> rows;
    };

    // autoregressive prior rollout; trunc_threshold <= 0 disables truncation;
    // detached samples cut gradient flow into the prior (factorization loss)
    Rollout prior_rollout(Tape& t, Var y_chd, RandomStream& rng, double trunc_threshold = 0.0,
                          bool detached = false) {
        using namespace ad;
        const int n_chords = static_cast<int>(t.val(y_chd).rows());
        BoundGru gru = bind_gru(t, "prior.gru");
        BoundAffine head = bind_affine(t, "prior.head");
        Rollout out;
        std::vector<Var> mus, sigmas;
        Var h = gru.initial_state(t);
        Var z_prev = t.constant(Mat::Zero(1, config.d_str));
        for (int c = 0; c < n_chords; ++c) {
            h = gru.step(concat_cols({z_prev, row(y_chd, c)}), h);
            GaussianSeq g = split_gaussian(head.apply(h), config.d_str);
            Mat eps(1, config.d_str);
            for (int i = 0; i < config.d_str; ++i) eps(0, i) = rng.truncated_normal(trunc_threshold);
            Var z = add(g.mu, mul(g.sigma, t.constant(eps)));
            if (detached) z = detach(z);
            out.rows.push_back(z);
            mus.push_back(g.mu);
            sigmas.push_back(g.sigma);
            z_prev = z;
        }
        out.z = concat_rows(out.rows);
        out.gauss = {concat_rows(mus), concat_rows(sigmas)};
        return out;
    }

    struct DecodeOut {
        Var xhat;  // N x 3, tanh-bounded
        Var khat;  // C x 3, tanh-bounded intermediate chordwise output
    };

    // z_cond: C x d_pln (or C x 3 planning signal for the cvae arch)
    // teacher_x: ground-truth features for teacher forcing, or nullptr to
    // free-run on the model's own previous output
    DecodeOut decode(Tape& t, Var z_cond, Var z_str, const Condition& cond,
                     const Mat* teacher_x) {
        using namespace ad;
        const int expected = config.arch == Arch::cvae ? kNumAttrs : config.d_pln;
        if (t.val(z_cond).cols() != expected) throw DataError("decode: latent width mismatch");
        const int n_chords = static_cast<int>(cond.sizes.size());
        int n_notes = 0;
        for (int s : cond.sizes) n_notes += s;
        if (teacher_x && (teacher_x->rows() != n_notes || teacher_x->cols() != kNumAttrs))
            throw DataError("decode: teacher features shape mismatch");

        Var zy = concat_cols({z_cond, z_str, cond.y_chd});
        BoundGru chd = bind_gru(t, "dec_chd.gru");
        std::vector<Var> hs(n_chords);
        Var h = chd.initial_state(t);
        for (int c = 0; c < n_chords; ++c) hs[c] = h = chd.step(row(zy, c), h);
        Var h_chd = concat_rows(hs);
        DecodeOut out;
        out.khat = tanh_(bind_affine(t, "dec_chd.khead").apply(h_chd));

        Var act = segment_broadcast(h_chd, cond.sizes);
        BoundGru note = bind_gru(t, "dec_note.gru");
        BoundAffine head = bind_affine(t, "dec_note.out");
        std::vector<Var> xs(n_notes);
        Var g = note.initial_state(t);
        Var prev = t.constant(Mat::Zero(1, kNumAttrs));
        for (int n = 0; n < n_notes; ++n) {
            g = note.step(concat_cols({row(act, n), row(cond.e_y, n), prev}), g);
            xs[n] = tanh_(head.apply(g));
            prev = teacher_x ? t.constant(teacher_x->row(n)) : xs[n];
        }
        out.xhat = concat_rows(xs);
        return out;
    }

    // ---- latent sampling -------------------------------------------------

    static Var reparameterize(Tape& t, const GaussianSeq& g, RandomStream& rng) {
        Mat eps(t.val(g.mu).rows(), t.val(g.mu).cols());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
        return ad::add(g.mu, ad::mul(g.sigma, t.constant(eps)));
    }

    static Var truncated_sample(Tape& t, const GaussianSeq& g, RandomStream& rng,
                                double threshold) {
        if (threshold <= 0.0) throw DataError("truncated_sample: threshold must be > 0");
        Mat eps(t.val(g.mu).rows(), t.val(g.mu).cols());
        for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.truncated_normal(threshold);
        return ad::add(g.mu, ad::mul(g.sigma, t.constant(eps)));
    }

    // iid standard-normal planning latent (its prior), optionally truncated
    Mat sample_pln_prior(int n_chords, RandomStream& rng, double trunc_threshold = 0.0) const {
        Mat z(n_chords, config.d_pln);
        for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.truncated_normal(trunc_threshold);
        return z;
    }

    // ---- elbo ----------------------------------------------------------

    struct ElboTerms {
        Var recon_note, recon_chord, kl_pln, kl_str, total;
    };

    ElboTerms elbo_terms(Tape& t, const Mat& x, const Mat& k, const EncodeOut& enc,
                         const GaussianSeq& prior_str, const DecodeOut& dec) {
        using namespace ad;
        ElboTerms e;
        e.recon_note = mse(dec.xhat, t.constant(x));
        e.recon_chord = mse(dec.khat, t.constant(k));
        e.kl_pln = config.arch == Arch::cvae ? t.constant(Mat::Zero(1, 1))
                                             : kl_standard(enc.post_pln.mu, enc.post_pln.sigma);
        e.kl_str = kl_diag(enc.post_str.mu, enc.post_str.sigma, prior_str.mu, prior_str.sigma);
        e.total = add(add(e.recon_note, e.recon_chord), add(e.kl_pln, e.kl_str));
        return e;
    }

    // ---- binding helpers -------------------------------------------------

    BoundGru bind_gru(Tape& t, const std::string& base) {
        BoundGru g;
        g.Wr = t.leaf(param(base + ".Wr"));
        g.Ur = t.leaf(param(base + ".Ur"));
        g.br = t.leaf(param(base + ".br"));
        g.Wu = t.leaf(param(base + ".Wu"));
        g.Uu = t.leaf(param(base + ".Uu"));
        g.bu = t.leaf(param(base + ".bu"));
        g.Wn = t.leaf(param(base + ".Wn"));
        g.Un = t.leaf(param(base + ".Un"));
        g.bn = t.leaf(param(base + ".bn"));
        g.hidden = static_cast<int>(param(base + ".Ur").value.rows());
        return g;
    }

    BoundAffine bind_affine(Tape& t, const std::string& base) {
        return BoundAffine{t.leaf(param(base + ".W")), t.leaf(param(base + ".b"))};
    }

    static GaussianSeq split_gaussian(Var head, int d) {
        GaussianSeq g;
        g.mu = ad::cols(head, 0, d);
        g.sigma = ad::add_scalar(ad::softplus(ad::cols(head, d, d)), kSigmaFloor);
        return g;
    }

private:
    void add_param(const std::string& name, int rows, int cols) {
        index_[name] = params_.size();
        params_.push_back(std::make_unique<Param>(name, Mat::Zero(rows, cols)));
    }

    void add_gru(const std::string& base, int input, int hidden) {
        for (const char* g : {"r", "u", "n"}) {
            add_param(base + ".W" + g, input, hidden);
            add_param(base + ".U" + g, hidden, hidden);
            add_param(base + ".b" + g, 1, hidden);
        }
    }

    void initialize_weights() {
        for (auto& p : params_) {
            Mat& m = p->value;
            if (m.rows() == 1) {  // biases start at zero
                m.setZero();
                continue;
            }
            RandomStream rng(derive_seed(config.seed, "init", p->name));
            const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
            for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-a, a);
            snap_f32(m);
        }
    }

    std::vector<std::unique_ptr<Param>> params_;
    std::map<std::string, size_t> index_;
};

// ---- checkpoint container ("XSKCH01") --------------------------------------

constexpr char kCheckpointMagic[8] = {'X', 'S', 'K', 'C', 'H', '0', '1', '\n'};

struct Checkpoint {
    ModelConfig config;
    int epoch = 0;
    int64_t adam_t = 0;
};

inline void save_checkpoint(const std::string& path, ModelState& model, int epoch,
                            int64_t adam_t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path + " for writing");

    nlohmann::json arrays = nlohmann::json::array();
    for (const Param* p : std::as_const(model).params()) {
        for (const char* kind : {"value", "adam_m", "adam_v"}) {
            arrays.push_back({{"name", p->name},
                              {"kind", kind},
                              {"rows", p->value.rows()},
                              {"cols", p->value.cols()}});
        }
    }
    nlohmann::json header{{"config", model.config}, {"epoch", epoch}, {"adam_t", adam_t},
                          {"arrays", arrays}};
    const std::string hs = header.dump();

    f.write(kCheckpointMagic, 8);
    const uint32_t hlen = static_cast<uint32_t>(hs.size());
    char lenbuf[4] = {static_cast<char>(hlen & 0xff), static_cast<char>((hlen >> 8) & 0xff),
                      static_cast<char>((hlen >> 16) & 0xff),
                      static_cast<char>((hlen >> 24) & 0xff)};
    f.write(lenbuf, 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    auto write_mat = [&f](const Mat& m) {
        std::vector<float> buf(static_cast<size_t>(m.size()));
        size_t k = 0;
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) buf[k++] = static_cast<float>(m(r, c));
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    };
    for (Param* p : model.params()) {
        write_mat(p->value);
        write_mat(p->m);
        write_mat(p->v);
    }
    if (!f) throw DataError("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path, ModelState& model) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError(path + ": not a checkpoint (bad magic)");
    char lenbuf[4];
    f.read(lenbuf, 4);
    const uint32_t hlen = static_cast<uint8_t>(lenbuf[0]) | (static_cast<uint8_t>(lenbuf[1]) << 8) |
                          (static_cast<uint8_t>(lenbuf[2]) << 16) |
                          (static_cast<uint8_t>(lenbuf[3]) << 24);
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw DataError(path + ": truncated header");
    const nlohmann::json header = nlohmann::json::parse(hs);

    Checkpoint ck;
    ck.config = header.at("config").get<ModelConfig>();
    ck.epoch = header.at("epoch").get<int>();
    ck.adam_t = header.at("adam_t").get<int64_t>();
    model.init(ck.config);

    auto read_mat = [&f, &path](Mat& m, Eigen::Index rows, Eigen::Index cols) {
        std::vector<float> buf(static_cast<size_t>(rows * cols));
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f) throw DataError(path + ": truncated payload");
        m.resize(rows, cols);
        size_t k = 0;
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<double>(buf[k++]);
    };
    for (const auto& a : header.at("arrays")) {
        Param& p = model.param(a.at("name").get<std::string>());
        const auto rows = a.at("rows").get<Eigen::Index>();
        const auto cols = a.at("cols").get<Eigen::Index>();
        if (rows != p.value.rows() || cols != p.value.cols())
            throw DataError(path + ": shape mismatch for " + p.name);
        const auto kind = a.at("kind").get<std::string>();
        if (kind == "value")
            read_mat(p.value, rows, cols);
        else if (kind == "adam_m")
            read_mat(p.m, rows, cols);
        else if (kind == "adam_v")
            read_mat(p.v, rows, cols);
        else
            throw DataError(path + ": unknown array kind " + kind);
    }
    return ck;
}

}  // namespace xsketch::seqcvae
