#include "quotestorm/victim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "quotestorm/util.hpp"

namespace quotestorm {

std::string victim_name(VictimKind kind) {
    switch (kind) {
        case VictimKind::BagLinear: return "bag";
        case VictimKind::FinGRU: return "fingru";
        case VictimKind::FinLSTM: return "finlstm";
    }
    return "?";
}

std::optional<VictimKind> parse_victim(std::string_view name) {
    if (name == "bag" || name == "baglinear") return VictimKind::BagLinear;
    if (name == "fingru" || name == "gru") return VictimKind::FinGRU;
    if (name == "finlstm" || name == "lstm") return VictimKind::FinLSTM;
    return std::nullopt;
}

std::string mode_name(AttackMode mode) { return mode == AttackMode::Concatenate ? "concatenate" : "manipulate"; }

std::optional<AttackMode> parse_mode(std::string_view name) {
    if (name == "concatenate" || name == "concat") return AttackMode::Concatenate;
    if (name == "manipulate") return AttackMode::Manipulate;
    return std::nullopt;
}

std::string kind_name(PerturbKind kind) { return kind == PerturbKind::Replace ? "replace" : "delete"; }

std::optional<PerturbKind> parse_kind(std::string_view name) {
    if (name == "replace") return PerturbKind::Replace;
    if (name == "delete") return PerturbKind::Delete;
    return std::nullopt;
}

// ------------------------------------------------------- dense helpers

namespace {

// y += W x, W is rows x cols
inline void gemv_add(const double* W, std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* w = W + r * cols;
        double s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += w[c] * x[c];
        y[r] += s;
    }
}

// dx += W^T g
inline void gemv_t_add(const double* W, std::size_t rows, std::size_t cols, const double* g, double* dx) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* w = W + r * cols;
        double gr = g[r];
        if (gr == 0.0) continue;
        for (std::size_t c = 0; c < cols; ++c) dx[c] += w[c] * gr;
    }
}

// dW += g x^T
inline void outer_add(double* dW, std::size_t rows, std::size_t cols, const double* g, const double* x) {
    for (std::size_t r = 0; r < rows; ++r) {
        double gr = g[r];
        if (gr == 0.0) continue;
        double* d = dW + r * cols;
        for (std::size_t c = 0; c < cols; ++c) d[c] += gr * x[c];
    }
}

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

// ------------------------------------------------------- VictimModel

void VictimModel::add_block(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    std::size_t offset = params_.size();
    layout_.push_back(ParamBlock{name, offset, rows, cols});
    fan_in_.push_back(fan_in);
    params_.resize(offset + rows * cols, 0.0);
}

void VictimModel::init_params(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x1417));
    for (std::size_t b = 0; b < layout_.size(); ++b) {
        double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in_[b], 1)));
        for (std::size_t i = 0; i < layout_[b].size(); ++i)
            params_[layout_[b].offset + i] = bound * (2.0 * uniform01(rng) - 1.0);
    }
}

double VictimModel::logit(const SequenceInput& x, ForwardTrace* trace) const {
    if (x.steps != hyper_.steps() || x.width != hyper_.input_width() || x.data.size() != x.steps * x.width)
        throw ShapeError("input is " + std::to_string(x.steps) + "x" + std::to_string(x.width) + ", model expects " +
                         std::to_string(hyper_.steps()) + "x" + std::to_string(hyper_.input_width()));
    return forward_impl(x, trace);
}

double VictimModel::backward(const SequenceInput& x, double dlogit, std::span<double> dparams, SequenceInput* dx) const {
    if (x.steps != hyper_.steps() || x.width != hyper_.input_width() || x.data.size() != x.steps * x.width)
        throw ShapeError("input shape does not match the model");
    if (!dparams.empty() && dparams.size() != params_.size()) throw ShapeError("gradient buffer size mismatch");
    if (dx) *dx = SequenceInput(x.steps, x.width);
    return backward_impl(x, dlogit, dparams.empty() ? nullptr : dparams.data(), dx);
}

namespace {

// ------------------------------------------------------------ BagLinear

class BagLinear final : public VictimModel {
public:
    explicit BagLinear(const VictimHyper& h) : VictimModel(VictimKind::BagLinear, h) {
        add_block("w", 1, h.input_width(), h.input_width());
        add_block("b", 1, 1, h.input_width());
    }
    std::unique_ptr<VictimModel> clone() const override { return std::make_unique<BagLinear>(*this); }

protected:
    Vec mean_row(const SequenceInput& x) const {
        Vec m(x.width, 0.0);
        for (std::size_t d = 0; d < x.steps; ++d)
            for (std::size_t c = 0; c < x.width; ++c) m[c] += x.row(d)[c];
        for (double& v : m) v /= static_cast<double>(x.steps);
        return m;
    }

    double forward_impl(const SequenceInput& x, ForwardTrace* trace) const override {
        if (trace) {
            trace->states.clear();
            for (std::size_t d = 0; d < x.steps; ++d) trace->states.emplace_back(x.row(d), x.row(d) + x.width);
            trace->attention.clear();
        }
        Vec m = mean_row(x);
        return dot(block(0), m.data(), x.width) + *block(1);
    }

    double backward_impl(const SequenceInput& x, double dlogit, double* dparams, SequenceInput* dx) const override {
        Vec m = mean_row(x);
        double logit = dot(block(0), m.data(), x.width) + *block(1);
        if (dparams) {
            double* dw = dparams + layout_[0].offset;
            for (std::size_t c = 0; c < x.width; ++c) dw[c] += dlogit * m[c];
            dparams[layout_[1].offset] += dlogit;
        }
        if (dx) {
            const double* w = block(0);
            double inv = 1.0 / static_cast<double>(x.steps);
            for (std::size_t d = 0; d < x.steps; ++d)
                for (std::size_t c = 0; c < x.width; ++c) dx->row(d)[c] = dlogit * w[c] * inv;
        }
        return logit;
    }
};

// Additive attention over step outputs followed by a linear read-out:
//   s_d = tanh(Wa h_d + ba), e_d = v . s_d, alpha = softmax(e),
//   logit = wo . sum_d alpha_d h_d + bo
class RecurrentBase : public VictimModel {
protected:
    RecurrentBase(VictimKind kind, const VictimHyper& h, std::size_t gates) : VictimModel(kind, h), gates_(gates) {
        const std::size_t H = h.hidden, I = h.input_width();
        add_block("W_x", gates * H, I, I);
        add_block("U_h", gates * H, H, H);
        add_block("b", gates * H, 1, H);
        add_block("W_att", H, H, H);
        add_block("b_att", H, 1, H);
        add_block("v_att", H, 1, H);
        add_block("w_out", H, 1, H);
        add_block("b_out", 1, 1, H);
    }

    enum Block { kWx, kUh, kB, kWatt, kBatt, kVatt, kWout, kBout };

    struct Attention {
        std::vector<Vec> s;
        Vec alpha;
        Vec ctx;
        double logit = 0;
    };

    Attention attend(const std::vector<Vec>& hs) const {
        const std::size_t H = hyper_.hidden, T = hs.size();
        Attention a;
        a.s.assign(T, Vec(H));
        Vec e(T);
        for (std::size_t d = 0; d < T; ++d) {
            Vec pre(block(kBatt), block(kBatt) + H);
            gemv_add(block(kWatt), H, H, hs[d].data(), pre.data());
            for (std::size_t k = 0; k < H; ++k) a.s[d][k] = std::tanh(pre[k]);
            e[d] = dot(block(kVatt), a.s[d].data(), H);
        }
        double mx = *std::max_element(e.begin(), e.end());
        a.alpha.resize(T);
        double z = 0;
        for (std::size_t d = 0; d < T; ++d) z += (a.alpha[d] = std::exp(e[d] - mx));
        for (double& v : a.alpha) v /= z;
        a.ctx.assign(H, 0.0);
        for (std::size_t d = 0; d < T; ++d)
            for (std::size_t k = 0; k < H; ++k) a.ctx[k] += a.alpha[d] * hs[d][k];
        a.logit = dot(block(kWout), a.ctx.data(), H) + *block(kBout);
        return a;
    }

    // Returns d logit / d h_d scaled by dlogit, accumulating attention/read-out grads.
    std::vector<Vec> attend_backward(const std::vector<Vec>& hs, const Attention& a, double dlogit,
                                     double* dparams) const {
        const std::size_t H = hyper_.hidden, T = hs.size();
        Vec dctx(H);
        for (std::size_t k = 0; k < H; ++k) dctx[k] = dlogit * block(kWout)[k];
        if (dparams) {
            double* dwo = dparams + layout_[kWout].offset;
            for (std::size_t k = 0; k < H; ++k) dwo[k] += dlogit * a.ctx[k];
            dparams[layout_[kBout].offset] += dlogit;
        }
        std::vector<Vec> dh(T, Vec(H, 0.0));
        Vec dalpha(T);
        for (std::size_t d = 0; d < T; ++d) {
            for (std::size_t k = 0; k < H; ++k) dh[d][k] += a.alpha[d] * dctx[k];
            dalpha[d] = dot(hs[d].data(), dctx.data(), H);
        }
        double mean = 0;
        for (std::size_t d = 0; d < T; ++d) mean += a.alpha[d] * dalpha[d];
        for (std::size_t d = 0; d < T; ++d) {
            double de = a.alpha[d] * (dalpha[d] - mean);
            Vec ds(H), das(H);
            for (std::size_t k = 0; k < H; ++k) {
                ds[k] = de * block(kVatt)[k];
                das[k] = ds[k] * (1.0 - a.s[d][k] * a.s[d][k]);
            }
            if (dparams) {
                double* dv = dparams + layout_[kVatt].offset;
                for (std::size_t k = 0; k < H; ++k) dv[k] += de * a.s[d][k];
                outer_add(dparams + layout_[kWatt].offset, H, H, das.data(), hs[d].data());
                double* dba = dparams + layout_[kBatt].offset;
                for (std::size_t k = 0; k < H; ++k) dba[k] += das[k];
            }
            gemv_t_add(block(kWatt), H, H, das.data(), dh[d].data());
        }
        return dh;
    }

    std::size_t gates_;
};

class FinGRU final : public RecurrentBase {
public:
    explicit FinGRU(const VictimHyper& h) : RecurrentBase(VictimKind::FinGRU, h, 3) {}
    std::unique_ptr<VictimModel> clone() const override { return std::make_unique<FinGRU>(*this); }

protected:
    // gates stacked as [reset r | update u | candidate n]
    //   r = sig(Wr x + Ur h + br), u = sig(Wu x + Uu h + bu)
    //   n = tanh(Wn x + Un (r*h) + bn), h' = u*h + (1-u)*n
    struct Step {
        Vec r, u, n, rh, h_prev;
    };

    std::vector<Vec> run(const SequenceInput& x, std::vector<Step>* steps) const {
        const std::size_t H = hyper_.hidden, I = x.width;
        const double* Wx = block(kWx);
        const double* Uh = block(kUh);
        const double* b = block(kB);
        std::vector<Vec> hs;
        Vec h(H, 0.0);
        for (std::size_t d = 0; d < x.steps; ++d) {
            Vec ax(b, b + 3 * H);
            gemv_add(Wx, 3 * H, I, x.row(d), ax.data());
            Vec ah(2 * H, 0.0);
            gemv_add(Uh, 2 * H, H, h.data(), ah.data());
            Step st;
            st.h_prev = h;
            st.r.resize(H);
            st.u.resize(H);
            st.rh.resize(H);
            for (std::size_t k = 0; k < H; ++k) {
                st.r[k] = sigmoid(ax[k] + ah[k]);
                st.u[k] = sigmoid(ax[H + k] + ah[H + k]);
                st.rh[k] = st.r[k] * h[k];
            }
            Vec an(ax.begin() + static_cast<std::ptrdiff_t>(2 * H), ax.end());
            gemv_add(Uh + 2 * H * H, H, H, st.rh.data(), an.data());
            st.n.resize(H);
            Vec hn(H);
            for (std::size_t k = 0; k < H; ++k) {
                st.n[k] = std::tanh(an[k]);
                hn[k] = st.u[k] * h[k] + (1.0 - st.u[k]) * st.n[k];
            }
            h = hn;
            hs.push_back(h);
            if (steps) steps->push_back(std::move(st));
        }
        return hs;
    }

    double forward_impl(const SequenceInput& x, ForwardTrace* trace) const override {
        auto hs = run(x, nullptr);
        auto a = attend(hs);
        if (trace) {
            trace->states = hs;
            trace->attention = a.alpha;
        }
        return a.logit;
    }

    double backward_impl(const SequenceInput& x, double dlogit, double* dparams, SequenceInput* dx) const override {
        const std::size_t H = hyper_.hidden, I = x.width;
        std::vector<Step> steps;
        auto hs = run(x, &steps);
        auto a = attend(hs);
        auto dh_out = attend_backward(hs, a, dlogit, dparams);
        const double* Wx = block(kWx);
        const double* Uh = block(kUh);
        Vec dh(H, 0.0);
        for (std::size_t d = x.steps; d-- > 0;) {
            const Step& st = steps[d];
            for (std::size_t k = 0; k < H; ++k) dh[k] += dh_out[d][k];
            Vec da(3 * H), dh_prev(H);
            for (std::size_t k = 0; k < H; ++k) {
                double du = dh[k] * (st.h_prev[k] - st.n[k]);
                double dn = dh[k] * (1.0 - st.u[k]);
                dh_prev[k] = dh[k] * st.u[k];
                da[H + k] = du * st.u[k] * (1.0 - st.u[k]);
                da[2 * H + k] = dn * (1.0 - st.n[k] * st.n[k]);
            }
            Vec drh(H, 0.0);
            gemv_t_add(Uh + 2 * H * H, H, H, da.data() + 2 * H, drh.data());
            for (std::size_t k = 0; k < H; ++k) {
                double dr = drh[k] * st.h_prev[k];
                dh_prev[k] += drh[k] * st.r[k];
                da[k] = dr * st.r[k] * (1.0 - st.r[k]);
            }
            gemv_t_add(Uh, 2 * H, H, da.data(), dh_prev.data());
            if (dparams) {
                outer_add(dparams + layout_[kWx].offset, 3 * H, I, da.data(), x.row(d));
                outer_add(dparams + layout_[kUh].offset, 2 * H, H, da.data(), st.h_prev.data());
                outer_add(dparams + layout_[kUh].offset + 2 * H * H, H, H, da.data() + 2 * H, st.rh.data());
                double* db = dparams + layout_[kB].offset;
                for (std::size_t k = 0; k < 3 * H; ++k) db[k] += da[k];
            }
            if (dx) gemv_t_add(Wx, 3 * H, I, da.data(), dx->row(d));
            dh = std::move(dh_prev);
        }
        return a.logit;
    }
};

class FinLSTM final : public RecurrentBase {
public:
    explicit FinLSTM(const VictimHyper& h) : RecurrentBase(VictimKind::FinLSTM, h, 4) {}
    std::unique_ptr<VictimModel> clone() const override { return std::make_unique<FinLSTM>(*this); }

protected:
    // gates stacked as [input i | forget f | cell g | output o]
    //   c' = f*c + i*g, h' = o*tanh(c')
    struct Step {
        Vec i, f, g, o, c_prev, h_prev, tc;
    };

    std::vector<Vec> run(const SequenceInput& x, std::vector<Step>* steps) const {
        const std::size_t H = hyper_.hidden, I = x.width;
        const double* Wx = block(kWx);
        const double* Uh = block(kUh);
        const double* b = block(kB);
        std::vector<Vec> hs;
        Vec h(H, 0.0), c(H, 0.0);
        for (std::size_t d = 0; d < x.steps; ++d) {
            Vec a(b, b + 4 * H);
            gemv_add(Wx, 4 * H, I, x.row(d), a.data());
            gemv_add(Uh, 4 * H, H, h.data(), a.data());
            Step st;
            st.c_prev = c;
            st.h_prev = h;
            st.i.resize(H);
            st.f.resize(H);
            st.g.resize(H);
            st.o.resize(H);
            st.tc.resize(H);
            for (std::size_t k = 0; k < H; ++k) {
                st.i[k] = sigmoid(a[k]);
                st.f[k] = sigmoid(a[H + k]);
                st.g[k] = std::tanh(a[2 * H + k]);
                st.o[k] = sigmoid(a[3 * H + k]);
                c[k] = st.f[k] * c[k] + st.i[k] * st.g[k];
                st.tc[k] = std::tanh(c[k]);
                h[k] = st.o[k] * st.tc[k];
            }
            hs.push_back(h);
            if (steps) steps->push_back(std::move(st));
        }
        return hs;
    }

    double forward_impl(const SequenceInput& x, ForwardTrace* trace) const override {
        auto hs = run(x, nullptr);
        auto a = attend(hs);
        if (trace) {
            trace->states = hs;
            trace->attention = a.alpha;
        }
        return a.logit;
    }

    double backward_impl(const SequenceInput& x, double dlogit, double* dparams, SequenceInput* dx) const override {
        const std::size_t H = hyper_.hidden, I = x.width;
        std::vector<Step> steps;
        auto hs = run(x, &steps);
        auto a = attend(hs);
        auto dh_out = attend_backward(hs, a, dlogit, dparams);
        const double* Wx = block(kWx);
        const double* Uh = block(kUh);
        Vec dh(H, 0.0), dc(H, 0.0);
        for (std::size_t d = x.steps; d-- > 0;) {
            const Step& st = steps[d];
            Vec da(4 * H), dc_prev(H);
            for (std::size_t k = 0; k < H; ++k) {
                double dhk = dh[k] + dh_out[d][k];
                double dout = dhk * st.tc[k];
                double dck = dc[k] + dhk * st.o[k] * (1.0 - st.tc[k] * st.tc[k]);
                da[k] = dck * st.g[k] * st.i[k] * (1.0 - st.i[k]);
                da[H + k] = dck * st.c_prev[k] * st.f[k] * (1.0 - st.f[k]);
                da[2 * H + k] = dck * st.i[k] * (1.0 - st.g[k] * st.g[k]);
                da[3 * H + k] = dout * st.o[k] * (1.0 - st.o[k]);
                dc_prev[k] = dck * st.f[k];
            }
            Vec dh_prev(H, 0.0);
            gemv_t_add(Uh, 4 * H, H, da.data(), dh_prev.data());
            if (dparams) {
                outer_add(dparams + layout_[kWx].offset, 4 * H, I, da.data(), x.row(d));
                outer_add(dparams + layout_[kUh].offset, 4 * H, H, da.data(), st.h_prev.data());
                double* db = dparams + layout_[kB].offset;
                for (std::size_t k = 0; k < 4 * H; ++k) db[k] += da[k];
            }
            if (dx) gemv_t_add(Wx, 4 * H, I, da.data(), dx->row(d));
            dh = std::move(dh_prev);
            dc = std::move(dc_prev);
        }
        return a.logit;
    }
};

}  // namespace

std::unique_ptr<VictimModel> make_victim(VictimKind kind, const VictimHyper& hyper, std::uint64_t seed) {
    if (hyper.embed_dim == 0 || hyper.hidden == 0) throw ConfigError("embed_dim and hidden must be >= 1");
    std::unique_ptr<VictimModel> m;
    switch (kind) {
        case VictimKind::BagLinear: m = std::make_unique<BagLinear>(hyper); break;
        case VictimKind::FinGRU: m = std::make_unique<FinGRU>(hyper); break;
        case VictimKind::FinLSTM: m = std::make_unique<FinLSTM>(hyper); break;
    }
    m->init_params(seed);
    return m;
}

// ------------------------------------------------------------- pooling

Vec pool_tweet(const Tweet& tweet, const EmbeddingTable& table) {
    Vec out(table.dim(), 0.0);
    std::size_t count = 0;
    for (TokenId t : tweet.tokens) {
        if (t == Vocab::pad_id) continue;
        auto v = table.vector(t);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += v[c];
        ++count;
    }
    if (count == 0) return out;
    for (double& v : out) v /= static_cast<double>(count);
    return out;
}

namespace {

struct SoftTweetParts {
    Vec numerator;
    double mass = 0;
};

// Positions without synonyms (or with a pad original) keep the original word.
SoftTweetParts soft_tweet_parts(const Tweet& tweet, std::span<const double> coef,
                                const std::vector<std::vector<TokenId>>& synonyms,
                                const std::vector<std::vector<double>>& mix, const EmbeddingTable& table) {
    const std::size_t D = table.dim();
    SoftTweetParts p{Vec(D, 0.0), 0.0};
    for (std::size_t j = 0; j < tweet.tokens.size(); ++j) {
        TokenId w = tweet.tokens[j];
        if (w == Vocab::pad_id) continue;
        bool supported = j < synonyms.size() && !synonyms[j].empty() && j < coef.size();
        if (!supported) {
            auto v = table.vector(w);
            for (std::size_t c = 0; c < D; ++c) p.numerator[c] += v[c];
            p.mass += 1.0;
            continue;
        }
        double a = coef[j];
        auto v = table.vector(w);
        Vec e(D);
        for (std::size_t c = 0; c < D; ++c) e[c] = (1.0 - a) * v[c];
        double mass = 1.0 - a;
        for (std::size_t k = 0; k < synonyms[j].size(); ++k) {
            double wk = a * mix[j][k];
            auto s = table.vector(synonyms[j][k]);
            for (std::size_t c = 0; c < D; ++c) e[c] += wk * s[c];
            if (synonyms[j][k] != Vocab::pad_id) mass += wk;
        }
        for (std::size_t c = 0; c < D; ++c) p.numerator[c] += e[c];
        p.mass += mass;
    }
    return p;
}

Vec finish_tweet(const SoftTweetParts& p) {
    Vec q = p.numerator;
    if (p.mass <= 0.0) {
        std::fill(q.begin(), q.end(), 0.0);
        return q;
    }
    for (double& v : q) v /= p.mass;
    return q;
}

std::vector<double> candidate_coef(const SoftCollection& day, const SoftCandidate& cand) {
    std::vector<double> coef(cand.word_select);
    if (day.mode == AttackMode::Manipulate)
        for (double& a : coef) a *= cand.inclusion;
    return coef;
}

}  // namespace

Vec pool_soft_tweet(const Tweet& tweet, std::span<const double> coef, const std::vector<std::vector<TokenId>>& synonyms,
                    const std::vector<std::vector<double>>& mix, const EmbeddingTable& table) {
    return finish_tweet(soft_tweet_parts(tweet, coef, synonyms, mix, table));
}

Vec pool_day(const TweetCollection& day, const EmbeddingTable& table) {
    Vec out(table.dim(), 0.0);
    if (day.tweets.empty()) return out;
    for (const auto& t : day.tweets) {
        Vec p = pool_tweet(t, table);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += p[c];
    }
    for (double& v : out) v /= static_cast<double>(day.tweets.size());
    return out;
}

Vec pool_day(const SoftCollection& day, const EmbeddingTable& table) {
    const std::size_t D = table.dim();
    Vec num(D, 0.0);
    if (day.mode == AttackMode::Concatenate) {
        double weight = static_cast<double>(day.benign.size());
        for (const auto& t : day.benign) {
            Vec p = pool_tweet(t, table);
            for (std::size_t c = 0; c < D; ++c) num[c] += p[c];
        }
        for (const auto& cand : day.candidates) {
            Vec q = pool_soft_tweet(day.benign.at(cand.source), cand.word_select, cand.synonyms, cand.mix, table);
            for (std::size_t c = 0; c < D; ++c) num[c] += cand.inclusion * q[c];
            weight += cand.inclusion;
        }
        if (weight <= 0.0) return num;
        for (double& v : num) v /= weight;
        return num;
    }
    if (day.benign.empty()) return num;
    std::vector<const SoftCandidate*> by_source(day.benign.size(), nullptr);
    for (const auto& cand : day.candidates) by_source.at(cand.source) = &cand;
    for (std::size_t b = 0; b < day.benign.size(); ++b) {
        Vec q = by_source[b] ? pool_soft_tweet(day.benign[b], candidate_coef(day, *by_source[b]), by_source[b]->synonyms,
                                               by_source[b]->mix, table)
                             : pool_tweet(day.benign[b], table);
        for (std::size_t c = 0; c < D; ++c) num[c] += q[c];
    }
    for (double& v : num) v /= static_cast<double>(day.benign.size());
    return num;
}

SoftGradients backward_pool_day(const SoftCollection& day, const EmbeddingTable& table, std::span<const double> g_pool) {
    const std::size_t D = table.dim();
    SoftGradients out;
    const std::size_t n = day.candidates.size();
    out.inclusion.assign(n, 0.0);
    out.word_select.resize(n);
    out.mix.resize(n);

    std::vector<SoftTweetParts> parts;
    std::vector<Vec> q;
    for (const auto& cand : day.candidates) {
        parts.push_back(soft_tweet_parts(day.benign.at(cand.source), candidate_coef(day, cand), cand.synonyms, cand.mix, table));
        q.push_back(finish_tweet(parts.back()));
    }

    // upstream gradient on each candidate's pooled tweet
    std::vector<Vec> g_q(n, Vec(D, 0.0));
    if (day.mode == AttackMode::Concatenate) {
        double weight = static_cast<double>(day.benign.size());
        for (const auto& cand : day.candidates) weight += cand.inclusion;
        if (weight > 0.0) {
            Vec pooled = pool_day(day, table);
            for (std::size_t i = 0; i < n; ++i) {
                double gm = 0;
                for (std::size_t c = 0; c < D; ++c) {
                    gm += g_pool[c] * (q[i][c] - pooled[c]);
                    g_q[i][c] = g_pool[c] * day.candidates[i].inclusion / weight;
                }
                out.inclusion[i] = gm / weight;
            }
        }
    } else if (!day.benign.empty()) {
        double inv = 1.0 / static_cast<double>(day.benign.size());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < D; ++c) g_q[i][c] = g_pool[c] * inv;
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto& cand = day.candidates[i];
        const Tweet& tweet = day.benign.at(cand.source);
        const std::size_t L = cand.word_select.size();
        out.word_select[i].assign(L, 0.0);
        out.mix[i].resize(L);
        for (std::size_t j = 0; j < L; ++j) out.mix[i][j].assign(j < cand.mix.size() ? cand.mix[j].size() : 0, 0.0);
        if (parts[i].mass <= 0.0) continue;

        Vec g_num(D);
        for (std::size_t c = 0; c < D; ++c) g_num[c] = g_q[i][c] / parts[i].mass;
        double g_mass = -dot(g_q[i].data(), q[i].data(), D) / parts[i].mass;
        auto coef = candidate_coef(day, cand);

        for (std::size_t j = 0; j < L && j < tweet.tokens.size(); ++j) {
            TokenId w = tweet.tokens[j];
            if (w == Vocab::pad_id || j >= cand.synonyms.size() || cand.synonyms[j].empty()) continue;
            auto ew = table.vector(w);
            double g_coef = -dot(g_num.data(), ew.data(), D) - g_mass;
            for (std::size_t k = 0; k < cand.synonyms[j].size(); ++k) {
                auto es = table.vector(cand.synonyms[j][k]);
                double pi = cand.synonyms[j][k] != Vocab::pad_id ? 1.0 : 0.0;
                double g_s = dot(g_num.data(), es.data(), D) + g_mass * pi;
                g_coef += cand.mix[j][k] * g_s;
                out.mix[i][j][k] = coef[j] * g_s;
            }
            if (day.mode == AttackMode::Manipulate) {
                out.word_select[i][j] = g_coef * cand.inclusion;
                out.inclusion[i] += g_coef * cand.word_select[j];
            } else {
                out.word_select[i][j] = g_coef;
            }
        }
    }
    return out;
}

SequenceInput build_input(const Instance& instance, const EmbeddingTable& table, const SoftCollection* soft) {
    const std::size_t steps = instance.tweet_window.size();
    const std::size_t D = table.dim();
    SequenceInput x(steps, D + kPriceFeatures);
    for (std::size_t d = 0; d < steps; ++d) {
        Vec pool = (soft && d + 1 == steps) ? pool_day(*soft, table) : pool_day(instance.tweet_window[d], table);
        std::copy(pool.begin(), pool.end(), x.row(d));
        std::copy(instance.price_window[d].begin(), instance.price_window[d].end(), x.row(d) + D);
    }
    return x;
}

SequenceInput build_input(const Instance& instance, const EmbeddingTable& table, const TweetCollection& anchor_day) {
    const std::size_t steps = instance.tweet_window.size();
    const std::size_t D = table.dim();
    SequenceInput x(steps, D + kPriceFeatures);
    for (std::size_t d = 0; d < steps; ++d) {
        Vec pool = d + 1 == steps ? pool_day(anchor_day, table) : pool_day(instance.tweet_window[d], table);
        std::copy(pool.begin(), pool.end(), x.row(d));
        std::copy(instance.price_window[d].begin(), instance.price_window[d].end(), x.row(d) + D);
    }
    return x;
}

Prediction forward(const VictimModel& model, const Instance& instance, const EmbeddingTable& table,
                   const SoftCollection* soft) {
    if (table.dim() != model.hyper().embed_dim) throw ShapeError("embedding dim differs from the model's");
    Prediction p;
    p.logit = model.logit(build_input(instance, table, soft));
    p.prob_up = sigmoid(p.logit);
    p.label = predict_label(p.logit);
    return p;
}

SoftGradients grad_attack_vars(const VictimModel& model, const Instance& instance, const EmbeddingTable& table,
                               const SoftCollection& soft) {
    if (table.dim() != model.hyper().embed_dim) throw ShapeError("embedding dim differs from the model's");
    SequenceInput x = build_input(instance, table, &soft);
    SequenceInput dx;
    double logit = model.backward(x, 1.0, {}, &dx);
    std::span<const double> g_pool(dx.row(x.steps - 1), table.dim());
    SoftGradients g = backward_pool_day(soft, table, g_pool);
    g.logit = logit;
    return g;
}

// ------------------------------------------------------------- training

BinaryMetrics binary_metrics(std::span<const int> predictions, std::span<const int> labels) {
    BinaryMetrics m;
    m.n = predictions.size();
    std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == labels[i]) ++correct;
        if (predictions[i] == 1 && labels[i] == 1) ++tp;
        if (predictions[i] == 1 && labels[i] != 1) ++fp;
        if (predictions[i] != 1 && labels[i] == 1) ++fn;
    }
    m.accuracy = m.n ? static_cast<double>(correct) / static_cast<double>(m.n) : 0.0;
    std::size_t denom = 2 * tp + fp + fn;
    m.f1 = denom ? 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 1.0;
    return m;
}

namespace {

double sample_loss_grad(const VictimModel& model, const SequenceInput& x, int label, double* grad) {
    double logit = model.logit(x);
    double p = sigmoid(logit);
    double loss = label == 1 ? softplus(-logit) : softplus(logit);
    double dlogit = p - (label == 1 ? 1.0 : 0.0);
    model.backward(x, dlogit, std::span<double>(grad, model.params().size()), nullptr);
    return loss;
}

}  // namespace

double batch_loss_gradient_serial(const VictimModel& model, std::span<const SequenceInput* const> inputs,
                                  std::span<const int> labels, std::vector<double>& grad) {
    const std::size_t P = model.params().size();
    grad.assign(P, 0.0);
    std::vector<double> sample(P);
    double loss = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::fill(sample.begin(), sample.end(), 0.0);
        loss += sample_loss_grad(model, *inputs[i], labels[i], sample.data());
        for (std::size_t k = 0; k < P; ++k) grad[k] += sample[k];
    }
    double inv = inputs.empty() ? 0.0 : 1.0 / static_cast<double>(inputs.size());
    for (double& g : grad) g *= inv;
    return loss * inv;
}

double batch_loss_gradient(const VictimModel& model, std::span<const SequenceInput* const> inputs,
                           std::span<const int> labels, std::vector<double>& grad) {
    const std::size_t P = model.params().size();
    const std::size_t n = inputs.size();
    for (const auto* x : inputs) {
        if (x->steps != model.hyper().steps() || x->width != model.hyper().input_width())
            throw ShapeError("batch input shape does not match the model");
    }
    std::vector<double> per_sample(n * P, 0.0);
    std::vector<double> losses(n, 0.0);
    const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < sn; ++i) {
        auto u = static_cast<std::size_t>(i);
        losses[u] = sample_loss_grad(model, *inputs[u], labels[u], per_sample.data() + u * P);
    }
    grad.assign(P, 0.0);
    double loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        loss += losses[i];
        const double* s = per_sample.data() + i * P;
        for (std::size_t k = 0; k < P; ++k) grad[k] += s[k];
    }
    double inv = n ? 1.0 / static_cast<double>(n) : 0.0;
    for (double& g : grad) g *= inv;
    return loss * inv;
}

BinaryMetrics evaluate(const VictimModel& model, std::span<const Instance> instances, const EmbeddingTable& table) {
    std::vector<int> preds, labels;
    for (const auto& inst : instances) {
        preds.push_back(forward(model, inst, table).label);
        labels.push_back(inst.label);
    }
    return binary_metrics(preds, labels);
}

namespace {

BinaryMetrics evaluate_inputs(const VictimModel& model, const std::vector<SequenceInput>& xs, const std::vector<int>& ys) {
    std::vector<int> preds(xs.size());
    const auto n = static_cast<std::ptrdiff_t>(xs.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        preds[static_cast<std::size_t>(i)] = predict_label(model.logit(xs[static_cast<std::size_t>(i)]));
    return binary_metrics(preds, ys);
}

}  // namespace

TrainReport train(VictimModel& model, const DatasetSplit& split, const EmbeddingTable& table, const TrainConfig& cfg) {
    if (!(cfg.lr > 0)) throw ConfigError("learning rate must be > 0");
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(cfg.holdout_fraction >= 0 && cfg.holdout_fraction < 1)) throw ConfigError("holdout_fraction must be in [0, 1)");
    if (split.train.empty()) throw ConfigError("training split is empty");
    if (table.dim() != model.hyper().embed_dim) throw ShapeError("embedding dim differs from the model's");

    std::size_t n_fit = split.train.size();
    if (cfg.holdout_fraction > 0) {
        n_fit = static_cast<std::size_t>(std::floor((1.0 - cfg.holdout_fraction) * static_cast<double>(n_fit)));
        n_fit = std::clamp<std::size_t>(n_fit, 1, split.train.size() - (split.train.size() > 1 ? 1 : 0));
    }
    std::vector<SequenceInput> fit_x, sel_x, train_x, test_x;
    std::vector<int> fit_y, sel_y, train_y, test_y;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
        train_x.push_back(build_input(split.train[i], table));
        train_y.push_back(split.train[i].label);
    }
    for (const auto& inst : split.test) {
        test_x.push_back(build_input(inst, table));
        test_y.push_back(inst.label);
    }
    fit_x.assign(train_x.begin(), train_x.begin() + static_cast<std::ptrdiff_t>(n_fit));
    fit_y.assign(train_y.begin(), train_y.begin() + static_cast<std::ptrdiff_t>(n_fit));
    if (cfg.holdout_fraction > 0) {
        sel_x.assign(train_x.begin() + static_cast<std::ptrdiff_t>(n_fit), train_x.end());
        sel_y.assign(train_y.begin() + static_cast<std::ptrdiff_t>(n_fit), train_y.end());
    } else {
        sel_x = test_x;
        sel_y = test_y;
    }
    if (sel_x.empty()) {
        sel_x = fit_x;
        sel_y = fit_y;
    }

    const std::size_t P = model.params().size();
    std::vector<double> m1(P, 0.0), m2(P, 0.0), grad;
    std::vector<double> best(model.params().begin(), model.params().end());
    double best_acc = -1;
    TrainReport report;
    Rng rng(mix_seed(cfg.seed, 0x7a1));
    std::vector<std::size_t> order(fit_x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t t = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[uniform_index(rng, k)]);
        double epoch_loss = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            std::size_t e = std::min(order.size(), b + cfg.batch_size);
            std::vector<const SequenceInput*> xs;
            std::vector<int> ys;
            for (std::size_t i = b; i < e; ++i) {
                xs.push_back(&fit_x[order[i]]);
                ys.push_back(fit_y[order[i]]);
            }
            double loss = batch_loss_gradient(model, xs, ys, grad);
            if (!std::isfinite(loss)) throw TrainingDiverged(static_cast<int>(epoch));
            epoch_loss += loss * static_cast<double>(e - b);
            ++t;
            double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
            double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
            auto params = model.params();
            for (std::size_t k = 0; k < P; ++k) {
                m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * grad[k];
                m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
                params[k] -= cfg.lr * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + cfg.eps);
            }
        }
        for (double p : model.params())
            if (!std::isfinite(p)) throw TrainingDiverged(static_cast<int>(epoch));
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        double acc = evaluate_inputs(model, sel_x, sel_y).accuracy;
        report.epoch_selection_accuracy.push_back(acc);
        if (acc > best_acc) {
            best_acc = acc;
            report.best_epoch = epoch;
            std::copy(model.params().begin(), model.params().end(), best.begin());
        }
    }
    std::copy(best.begin(), best.end(), model.params().begin());
    report.train = evaluate_inputs(model, train_x, train_y);
    report.test = test_x.empty() ? BinaryMetrics{} : evaluate_inputs(model, test_x, test_y);
    report.selection = evaluate_inputs(model, sel_x, sel_y);
    return report;
}

// ----------------------------------------------------------- checkpoints

void save_checkpoint(const std::string& path, const VictimModel& model, const std::string& vocab_hash) {
    nlohmann::ordered_json doc;
    doc["format"] = "quotestorm-checkpoint";
    doc["version"] = kCheckpointVersion;
    doc["victim"] = model.name();
    doc["hyper"] = {{"embed_dim", model.hyper().embed_dim},
                    {"price_dim", model.hyper().price_dim},
                    {"hidden", model.hyper().hidden},
                    {"window", model.hyper().window}};
    doc["vocab_hash"] = vocab_hash;
    doc["params"] = std::vector<double>(model.params().begin(), model.params().end());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path);
    out << doc.dump() << '\n';
}

std::unique_ptr<VictimModel> load_checkpoint(const std::string& path, const std::optional<std::string>& expected_vocab_hash) {
    std::ifstream in(path);
    if (!in) throw MissingData("checkpoint " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path, 1, e.what());
    }
    try {
        if (doc.at("format") != "quotestorm-checkpoint") throw FormatError(path, 1, "not a checkpoint");
        if (doc.at("version").get<int>() != kCheckpointVersion) throw FormatError(path, 1, "unsupported checkpoint version");
        auto kind = parse_victim(doc.at("victim").get<std::string>());
        if (!kind) throw FormatError(path, 1, "unknown victim");
        VictimHyper h;
        h.embed_dim = doc.at("hyper").at("embed_dim").get<std::size_t>();
        h.price_dim = doc.at("hyper").at("price_dim").get<std::size_t>();
        h.hidden = doc.at("hyper").at("hidden").get<std::size_t>();
        h.window = doc.at("hyper").at("window").get<std::size_t>();
        std::string hash = doc.at("vocab_hash").get<std::string>();
        if (expected_vocab_hash && *expected_vocab_hash != hash)
            throw IncompatibleArtifacts("checkpoint vocabulary hash " + hash + " does not match dataset vocabulary " +
                                        *expected_vocab_hash);
        auto model = make_victim(*kind, h, 0);
        auto params = doc.at("params").get<std::vector<double>>();
        if (params.size() != model->params().size()) throw FormatError(path, 1, "parameter count mismatch");
        std::copy(params.begin(), params.end(), model->params().begin());
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path, 1, e.what());
    }
}

}  // namespace quotestorm
