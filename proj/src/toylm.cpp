#include "rforge/toylm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "rforge/errors.hpp"
#include "rforge/metrics.hpp"
#include "rforge/rng.hpp"

namespace rforge {

namespace {

using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

std::uint64_t fnv1a(std::uint64_t h, const std::vector<double>& v) {
    for (double x : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

void softmax_inplace(std::vector<double>& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : v) x /= sum;
}

// y += M x  (M is rows x cols, row-major)
void matvec_acc(const std::vector<double>& m, const double* x, double* y, int rows,
                int cols) {
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        const double* row = m.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) s += row[j] * x[j];
        y[i] += s;
    }
}

// y += M^T x
void matvec_t_acc(const std::vector<double>& m, const double* x, double* y, int rows,
                  int cols) {
    for (int i = 0; i < rows; ++i) {
        const double* row = m.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) y[j] += row[j] * x[i];
    }
}

// M += a (outer) b
void outer_acc(std::vector<double>& m, const double* a, const double* b, int rows,
               int cols) {
    for (int i = 0; i < rows; ++i) {
        double* row = m.data() + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) row[j] += a[i] * b[j];
    }
}

// Everything the backward pass needs from one forward run.
struct ForwardCache {
    int T = 0;
    int image_pos = -1;
    std::vector<double> e, q, k, v, a, u, f;  // T x d
    std::vector<double> z, g;                 // T x h
    std::vector<double> alpha;                // T x T (row t: weights over j <= t)
    TokenDistSeq probs;
};

void run_forward(const ModelParams& p, const std::vector<int>& ids,
                 const std::vector<double>& visual, ForwardCache& c) {
    const int T = static_cast<int>(ids.size());
    const int d = p.d, h = p.hidden(), V = p.vocab.size();
    if (T == 0) throw ArgError("forward: empty sequence");
    if (T > p.context)
        throw ArgError("forward: sequence length " + std::to_string(T) +
                       " exceeds context " + std::to_string(p.context));
    if (static_cast<int>(visual.size()) != p.d_vis)
        throw ArgError("forward: visual vector has wrong dimension");

    c.T = T;
    c.image_pos = -1;
    for (int t = 0; t < T; ++t) {
        const int id = ids[t];
        if (id < 0 || id >= V) throw ArgError("forward: token id outside vocabulary");
        if (id == Vocab::kImage) {
            if (c.image_pos >= 0) throw ArgError("forward: duplicate IMAGE sentinel");
            c.image_pos = t;
        }
    }
    if (c.image_pos < 0) throw ArgError("forward: missing IMAGE sentinel");

    const auto td = static_cast<std::size_t>(T) * d;
    c.e.assign(td, 0.0);
    c.q.assign(td, 0.0);
    c.k.assign(td, 0.0);
    c.v.assign(td, 0.0);
    c.a.assign(td, 0.0);
    c.u.assign(td, 0.0);
    c.f.assign(td, 0.0);
    c.z.assign(static_cast<std::size_t>(T) * h, 0.0);
    c.g.assign(static_cast<std::size_t>(T) * h, 0.0);
    c.alpha.assign(static_cast<std::size_t>(T) * T, 0.0);

    for (int t = 0; t < T; ++t) {
        double* e_t = c.e.data() + static_cast<std::size_t>(t) * d;
        if (t == c.image_pos) {
            for (int i = 0; i < d; ++i) e_t[i] = p.map_b[i];
            matvec_acc(p.map_w, visual.data(), e_t, d, p.d_vis);
        } else {
            const double* row = p.embed.data() + static_cast<std::size_t>(ids[t]) * d;
            for (int i = 0; i < d; ++i) e_t[i] = row[i];
        }
        const double* pos_t = p.pos.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) e_t[i] += pos_t[i];

        matvec_acc(p.wq, e_t, c.q.data() + static_cast<std::size_t>(t) * d, d, d);
        matvec_acc(p.wk, e_t, c.k.data() + static_cast<std::size_t>(t) * d, d, d);
        matvec_acc(p.wv, e_t, c.v.data() + static_cast<std::size_t>(t) * d, d, d);
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    c.probs.assign(static_cast<std::size_t>(T), std::vector<double>());
    for (int t = 0; t < T; ++t) {
        const double* q_t = c.q.data() + static_cast<std::size_t>(t) * d;
        std::vector<double> scores(static_cast<std::size_t>(t) + 1);
        for (int j = 0; j <= t; ++j) {
            const double* k_j = c.k.data() + static_cast<std::size_t>(j) * d;
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += q_t[i] * k_j[i];
            scores[static_cast<std::size_t>(j)] = s * scale;
        }
        softmax_inplace(scores);
        double* alpha_t = c.alpha.data() + static_cast<std::size_t>(t) * T;
        double* a_t = c.a.data() + static_cast<std::size_t>(t) * d;
        for (int j = 0; j <= t; ++j) {
            alpha_t[j] = scores[static_cast<std::size_t>(j)];
            const double* v_j = c.v.data() + static_cast<std::size_t>(j) * d;
            for (int i = 0; i < d; ++i) a_t[i] += alpha_t[j] * v_j[i];
        }

        const double* e_t = c.e.data() + static_cast<std::size_t>(t) * d;
        double* u_t = c.u.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) u_t[i] = e_t[i] + a_t[i];

        double* z_t = c.z.data() + static_cast<std::size_t>(t) * h;
        double* g_t = c.g.data() + static_cast<std::size_t>(t) * h;
        for (int i = 0; i < h; ++i) z_t[i] = p.b1[i];
        matvec_acc(p.w1, u_t, z_t, h, d);
        for (int i = 0; i < h; ++i) g_t[i] = std::tanh(z_t[i]);

        double* f_t = c.f.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) f_t[i] = u_t[i] + p.b2[i];
        matvec_acc(p.w2, g_t, f_t, d, h);

        std::vector<double> logits(static_cast<std::size_t>(V));
        for (int vtok = 0; vtok < V; ++vtok) logits[static_cast<std::size_t>(vtok)] = p.out_b[vtok];
        matvec_acc(p.out_w, f_t, logits.data(), V, d);
        softmax_inplace(logits);
        c.probs[static_cast<std::size_t>(t)] = std::move(logits);
    }
}

struct FullGrads {
    std::vector<double> embed, map_w, map_b, pos, wq, wk, wv, w1, b1, w2, b2, out_w, out_b;

    explicit FullGrads(const ModelParams& p)
        : embed(p.embed.size(), 0.0),
          map_w(p.map_w.size(), 0.0),
          map_b(p.map_b.size(), 0.0),
          pos(p.pos.size(), 0.0),
          wq(p.wq.size(), 0.0),
          wk(p.wk.size(), 0.0),
          wv(p.wv.size(), 0.0),
          w1(p.w1.size(), 0.0),
          b1(p.b1.size(), 0.0),
          w2(p.w2.size(), 0.0),
          b2(p.b2.size(), 0.0),
          out_w(p.out_w.size(), 0.0),
          out_b(p.out_b.size(), 0.0) {}
};

// Backward for one example. dlogits at the loss positions must already be
// scaled (sample weight / number of loss positions).
void run_backward(const ModelParams& p, const std::vector<int>& ids,
                  const std::vector<double>& visual, const ForwardCache& c,
                  const std::vector<std::vector<double>>& dlogits, FullGrads& grads) {
    const int T = c.T, d = p.d, h = p.hidden();
    const auto td = static_cast<std::size_t>(T) * d;
    std::vector<double> de(td, 0.0), dq(td, 0.0), dk(td, 0.0), dv(td, 0.0);

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (int t = 0; t < T; ++t) {
        if (dlogits[static_cast<std::size_t>(t)].empty()) continue;
        const double* dl = dlogits[static_cast<std::size_t>(t)].data();
        const double* f_t = c.f.data() + static_cast<std::size_t>(t) * d;

        // Output projection.
        std::vector<double> df(static_cast<std::size_t>(d), 0.0);
        matvec_t_acc(p.out_w, dl, df.data(), p.vocab.size(), d);
        outer_acc(grads.out_w, dl, f_t, p.vocab.size(), d);
        for (int vtok = 0; vtok < p.vocab.size(); ++vtok) grads.out_b[vtok] += dl[vtok];

        // MLP with residual: f = u + W2 tanh(W1 u + b1) + b2.
        const double* u_t = c.u.data() + static_cast<std::size_t>(t) * d;
        const double* g_t = c.g.data() + static_cast<std::size_t>(t) * h;
        std::vector<double> dg(static_cast<std::size_t>(h), 0.0);
        matvec_t_acc(p.w2, df.data(), dg.data(), d, h);
        outer_acc(grads.w2, df.data(), g_t, d, h);
        for (int i = 0; i < d; ++i) grads.b2[i] += df[static_cast<std::size_t>(i)];

        std::vector<double> dz(static_cast<std::size_t>(h));
        for (int i = 0; i < h; ++i) dz[static_cast<std::size_t>(i)] =
            dg[static_cast<std::size_t>(i)] * (1.0 - g_t[i] * g_t[i]);
        outer_acc(grads.w1, dz.data(), u_t, h, d);
        for (int i = 0; i < h; ++i) grads.b1[i] += dz[static_cast<std::size_t>(i)];

        std::vector<double> du = df;  // residual path
        matvec_t_acc(p.w1, dz.data(), du.data(), h, d);

        // u = e + a
        double* de_t = de.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) de_t[i] += du[static_cast<std::size_t>(i)];

        // Attention: a_t = sum_j alpha_tj v_j.
        const double* alpha_t = c.alpha.data() + static_cast<std::size_t>(t) * T;
        std::vector<double> dalpha(static_cast<std::size_t>(t) + 1, 0.0);
        for (int j = 0; j <= t; ++j) {
            const double* v_j = c.v.data() + static_cast<std::size_t>(j) * d;
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += du[static_cast<std::size_t>(i)] * v_j[i];
            dalpha[static_cast<std::size_t>(j)] = s;
            double* dv_j = dv.data() + static_cast<std::size_t>(j) * d;
            for (int i = 0; i < d; ++i) dv_j[i] += alpha_t[j] * du[static_cast<std::size_t>(i)];
        }
        double dot = 0.0;
        for (int j = 0; j <= t; ++j) dot += alpha_t[j] * dalpha[static_cast<std::size_t>(j)];
        const double* q_t = c.q.data() + static_cast<std::size_t>(t) * d;
        double* dq_t = dq.data() + static_cast<std::size_t>(t) * d;
        for (int j = 0; j <= t; ++j) {
            const double ds = alpha_t[j] * (dalpha[static_cast<std::size_t>(j)] - dot) * scale;
            const double* k_j = c.k.data() + static_cast<std::size_t>(j) * d;
            double* dk_j = dk.data() + static_cast<std::size_t>(j) * d;
            for (int i = 0; i < d; ++i) {
                dq_t[i] += ds * k_j[i];
                dk_j[i] += ds * q_t[i];
            }
        }
    }

    // Projections q/k/v back to e, then e back to the parameter tables.
    for (int t = 0; t < T; ++t) {
        const double* e_t = c.e.data() + static_cast<std::size_t>(t) * d;
        double* de_t = de.data() + static_cast<std::size_t>(t) * d;
        const double* dq_t = dq.data() + static_cast<std::size_t>(t) * d;
        const double* dk_t = dk.data() + static_cast<std::size_t>(t) * d;
        const double* dv_t = dv.data() + static_cast<std::size_t>(t) * d;
        outer_acc(grads.wq, dq_t, e_t, d, d);
        outer_acc(grads.wk, dk_t, e_t, d, d);
        outer_acc(grads.wv, dv_t, e_t, d, d);
        matvec_t_acc(p.wq, dq_t, de_t, d, d);
        matvec_t_acc(p.wk, dk_t, de_t, d, d);
        matvec_t_acc(p.wv, dv_t, de_t, d, d);

        double* dpos_t = grads.pos.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) dpos_t[i] += de_t[i];
        if (t == c.image_pos) {
            for (int i = 0; i < d; ++i) grads.map_b[i] += de_t[i];
            outer_acc(grads.map_w, de_t, visual.data(), d, p.d_vis);
        } else {
            double* drow = grads.embed.data() + static_cast<std::size_t>(ids[t]) * d;
            for (int i = 0; i < d; ++i) drow[i] += de_t[i];
        }
    }
}

// Predicted target tokens at the loss positions, detokenized; sentinels are
// skipped so the text is comparable with the raw label.
std::string greedy_target_text(const ModelParams& p, const ForwardCache& c,
                               const std::vector<bool>& mask) {
    std::string out;
    for (int t = 0; t + 1 < c.T; ++t) {
        if (!mask[static_cast<std::size_t>(t) + 1]) continue;
        const auto& dist = c.probs[static_cast<std::size_t>(t)];
        const int id = static_cast<int>(std::max_element(dist.begin(), dist.end()) -
                                        dist.begin());
        if (id == Vocab::kPad || id == Vocab::kStop || id == Vocab::kImage) continue;
        if (!out.empty()) out.push_back(' ');
        out += p.vocab.tokens[static_cast<std::size_t>(id)];
    }
    return out;
}

void sgd_step(std::vector<double>& param, const std::vector<double>& grad, double lr) {
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

}  // namespace

int Vocab::id(const std::string& token) const {
    for (std::size_t i = 4; i < tokens.size(); ++i)
        if (tokens[i] == token) return static_cast<int>(i);
    return kUnk;
}

Vocab Vocab::build(const std::vector<std::string>& texts, std::size_t max_size) {
    std::unordered_map<std::string, long> freq;
    for (const std::string& text : texts)
        for (const std::string& tok : normalize(text)) ++freq[tok];

    std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab v;
    v.tokens = {"<pad>", "<stop>", "<image>", "<unk>"};
    const std::size_t room = max_size > 4 ? max_size - 4 : 0;
    for (std::size_t i = 0; i < items.size() && i < room; ++i)
        v.tokens.push_back(items[i].first);
    return v;
}

std::string param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::map_visual: return "map_visual";
        case ParamGroup::embed: return "embed";
        case ParamGroup::core: return "core";
        case ParamGroup::out: return "out";
    }
    return "core";
}

const std::set<ParamGroup>& all_param_groups() {
    static const std::set<ParamGroup> groups = {ParamGroup::map_visual, ParamGroup::embed,
                                                ParamGroup::core, ParamGroup::out};
    return groups;
}

ModelParams init_model(Vocab vocab, int d, int d_vis, int context, std::uint64_t seed) {
    if (vocab.size() < 4)
        throw ArgError("init_model: vocabulary must hold the reserved ids (V >= 4)");
    if (d < 1 || d_vis < 1 || context < 1)
        throw ArgError("init_model: dimensions must be positive");

    ModelParams p;
    p.vocab = std::move(vocab);
    p.d = d;
    p.d_vis = d_vis;
    p.context = context;
    const int V = p.vocab.size(), h = p.hidden();

    Rng rng(seed);
    auto randn = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (double& x : v) x = rng.normal(0.0, 0.08);
    };
    randn(p.embed, static_cast<std::size_t>(V) * d);
    randn(p.map_w, static_cast<std::size_t>(d) * d_vis);
    p.map_b.assign(static_cast<std::size_t>(d), 0.0);
    randn(p.pos, static_cast<std::size_t>(context) * d);
    randn(p.wq, static_cast<std::size_t>(d) * d);
    randn(p.wk, static_cast<std::size_t>(d) * d);
    randn(p.wv, static_cast<std::size_t>(d) * d);
    randn(p.w1, static_cast<std::size_t>(h) * d);
    p.b1.assign(static_cast<std::size_t>(h), 0.0);
    randn(p.w2, static_cast<std::size_t>(d) * h);
    p.b2.assign(static_cast<std::size_t>(d), 0.0);
    randn(p.out_w, static_cast<std::size_t>(V) * d);
    p.out_b.assign(static_cast<std::size_t>(V), 0.0);
    return p;
}

std::uint64_t param_group_hash(const ModelParams& p, ParamGroup group) {
    std::uint64_t h = 1469598103934665603ull;
    switch (group) {
        case ParamGroup::map_visual:
            h = fnv1a(h, p.map_w);
            h = fnv1a(h, p.map_b);
            break;
        case ParamGroup::embed:
            h = fnv1a(h, p.embed);
            break;
        case ParamGroup::core:
            h = fnv1a(h, p.pos);
            h = fnv1a(h, p.wq);
            h = fnv1a(h, p.wk);
            h = fnv1a(h, p.wv);
            h = fnv1a(h, p.w1);
            h = fnv1a(h, p.b1);
            h = fnv1a(h, p.w2);
            h = fnv1a(h, p.b2);
            break;
        case ParamGroup::out:
            h = fnv1a(h, p.out_w);
            h = fnv1a(h, p.out_b);
            break;
    }
    return h;
}

std::map<std::string, std::uint64_t> all_param_hashes(const ModelParams& p) {
    std::map<std::string, std::uint64_t> out;
    for (ParamGroup g : all_param_groups()) out[param_group_name(g)] = param_group_hash(p, g);
    return out;
}

void save_checkpoint(const ModelParams& p, const std::string& path) {
    json j;
    j["version"] = 1;
    j["vocab"] = p.vocab.tokens;
    j["d"] = p.d;
    j["d_vis"] = p.d_vis;
    j["context"] = p.context;
    json arrays;
    arrays["embed"] = p.embed;
    arrays["map_w"] = p.map_w;
    arrays["map_b"] = p.map_b;
    arrays["pos"] = p.pos;
    arrays["wq"] = p.wq;
    arrays["wk"] = p.wk;
    arrays["wv"] = p.wv;
    arrays["w1"] = p.w1;
    arrays["b1"] = p.b1;
    arrays["w2"] = p.w2;
    arrays["b2"] = p.b2;
    arrays["out_w"] = p.out_w;
    arrays["out_b"] = p.out_b;
    j["params"] = std::move(arrays);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << j.dump();
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("malformed checkpoint " + path + ": " + e.what());
    }
    if (j.value("version", 0) != 1)
        throw DataError("unsupported checkpoint version in " + path);
    ModelParams p;
    p.vocab.tokens = j.at("vocab").get<std::vector<std::string>>();
    p.d = j.at("d").get<int>();
    p.d_vis = j.at("d_vis").get<int>();
    p.context = j.at("context").get<int>();
    const json& arrays = j.at("params");
    auto load = [&](const char* key, std::vector<double>& v, std::size_t expect) {
        v = arrays.at(key).get<std::vector<double>>();
        if (v.size() != expect)
            throw DataError(std::string("checkpoint array '") + key + "' has wrong size");
    };
    const auto V = static_cast<std::size_t>(p.vocab.size());
    const auto d = static_cast<std::size_t>(p.d);
    const auto h = static_cast<std::size_t>(p.hidden());
    load("embed", p.embed, V * d);
    load("map_w", p.map_w, d * static_cast<std::size_t>(p.d_vis));
    load("map_b", p.map_b, d);
    load("pos", p.pos, static_cast<std::size_t>(p.context) * d);
    load("wq", p.wq, d * d);
    load("wk", p.wk, d * d);
    load("wv", p.wv, d * d);
    load("w1", p.w1, h * d);
    load("b1", p.b1, h);
    load("w2", p.w2, d * h);
    load("b2", p.b2, d);
    load("out_w", p.out_w, V * d);
    load("out_b", p.out_b, V);
    return p;
}

TokenDistSeq forward(const ModelParams& params, const std::vector<int>& ids,
                     const std::vector<double>& visual) {
    ForwardCache cache;
    run_forward(params, ids, visual, cache);
    return cache.probs;
}

EncodedExample encode_example(const Vocab& vocab, const DialogExample& dialog,
                              int context, const std::string& recipe_id) {
    EncodedExample ex;
    ex.visual = dialog.visual;
    ex.target_text = dialog.target;
    ex.recipe_id = recipe_id;

    auto push_tokens = [&](const std::string& text, bool is_target) {
        for (const std::string& tok : normalize(text)) {
            ex.ids.push_back(vocab.id(tok));
            ex.target_mask.push_back(is_target);
        }
    };
    push_tokens("human :", false);
    push_tokens(dialog.query, false);
    ex.ids.push_back(Vocab::kImage);
    ex.target_mask.push_back(false);
    ex.ids.push_back(Vocab::kStop);
    ex.target_mask.push_back(false);
    push_tokens("assistant :", false);
    const std::size_t target_begin = ex.ids.size();
    push_tokens(dialog.target, true);
    ex.ids.push_back(Vocab::kStop);
    ex.target_mask.push_back(true);

    if (ex.ids.size() > static_cast<std::size_t>(context)) {
        if (target_begin + 2 > static_cast<std::size_t>(context))
            throw DataError("example does not fit the model context");
        ex.ids.resize(static_cast<std::size_t>(context));
        ex.target_mask.resize(static_cast<std::size_t>(context));
        // Keep the closing STOP so decoding still terminates.
        ex.ids.back() = Vocab::kStop;
        ex.target_mask.back() = true;
    }
    return ex;
}

std::set<ParamGroup> default_trainable(Stage stage) {
    if (stage == Stage::S0) return {ParamGroup::map_visual};
    return {ParamGroup::embed, ParamGroup::core, ParamGroup::out};
}

std::pair<ScaledLossValue, Gradients> loss_and_grads(
    const ModelParams& params, const std::vector<EncodedExample>& batch, Stage stage,
    const std::optional<ScaleConfig>& scale_config,
    const std::set<ParamGroup>& trainable) {
    if (batch.empty()) throw ArgError("loss_and_grads: empty batch");
    if (stage == Stage::S3 && !scale_config)
        throw ConfigError("stage S3 requires a scale config");

    FullGrads grads(params);
    const double n = static_cast<double>(batch.size());
    ScaledLossValue agg;

    for (const EncodedExample& ex : batch) {
        ForwardCache cache;
        run_forward(params, ex.ids, ex.visual, cache);

        // Per-sample cross-entropy over target-turn predictions only.
        std::vector<std::pair<int, int>> loss_pos;  // (position, target id)
        for (int t = 0; t + 1 < cache.T; ++t)
            if (ex.target_mask[static_cast<std::size_t>(t) + 1])
                loss_pos.emplace_back(t, ex.ids[static_cast<std::size_t>(t) + 1]);
        if (loss_pos.empty()) throw DataError("example has no target tokens");

        double ce = 0.0;
        for (const auto& [t, y] : loss_pos) {
            const double pr = std::max(cache.probs[static_cast<std::size_t>(t)]
                                           [static_cast<std::size_t>(y)], 1e-12);
            ce -= std::log(pr);
        }
        ce /= static_cast<double>(loss_pos.size());

        double l_br = 1.0;
        if (stage == Stage::S3) {
            const std::string y_pred = greedy_target_text(params, cache, ex.target_mask);
            const ScaledLossValue v =
                scale_breakdown(y_pred, ex.target_text, ce, *scale_config);
            l_br = v.l_br;
            agg.l_bleu += v.l_bleu / n;
            agg.l_rougeL += v.l_rougeL / n;
        }
        agg.l_ce += ce / n;
        agg.l_br += l_br / n;
        agg.l_final += l_br * ce / n;

        // dCE/dlogits = p - onehot, scaled by the per-sample weight.
        const double weight = l_br / (n * static_cast<double>(loss_pos.size()));
        std::vector<std::vector<double>> dlogits(static_cast<std::size_t>(cache.T));
        for (const auto& [t, y] : loss_pos) {
            std::vector<double> dl = cache.probs[static_cast<std::size_t>(t)];
            dl[static_cast<std::size_t>(y)] -= 1.0;
            for (double& x : dl) x *= weight;
            dlogits[static_cast<std::size_t>(t)] = std::move(dl);
        }
        run_backward(params, ex.ids, ex.visual, cache, dlogits, grads);
    }

    Gradients out;
    out.groups = trainable;
    if (trainable.count(ParamGroup::map_visual) > 0) {
        out.map_w = std::move(grads.map_w);
        out.map_b = std::move(grads.map_b);
    }
    if (trainable.count(ParamGroup::embed) > 0) out.embed = std::move(grads.embed);
    if (trainable.count(ParamGroup::core) > 0) {
        out.pos = std::move(grads.pos);
        out.wq = std::move(grads.wq);
        out.wk = std::move(grads.wk);
        out.wv = std::move(grads.wv);
        out.w1 = std::move(grads.w1);
        out.b1 = std::move(grads.b1);
        out.w2 = std::move(grads.w2);
        out.b2 = std::move(grads.b2);
    }
    if (trainable.count(ParamGroup::out) > 0) {
        out.out_w = std::move(grads.out_w);
        out.out_b = std::move(grads.out_b);
    }
    return {agg, std::move(out)};
}

double lr_at_step(const TrainConfig& config, int step, int total_steps) {
    const int warmup = static_cast<int>(
        std::floor(config.warmup_ratio * static_cast<double>(total_steps)));
    if (warmup > 0 && step < warmup)
        return config.lr * static_cast<double>(step) / static_cast<double>(warmup);
    const int denom = std::max(1, total_steps - warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(denom);
    return config.lr * 0.5 * (1.0 + std::cos(kPi * std::min(1.0, progress)));
}

void write_trace_jsonl(const TrainTrace& trace, const std::string& path, ScaleMode mode) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write trace: " + path);
    for (const TraceStep& s : trace.steps) {
        json j;
        j["step"] = s.step;
        j["lr"] = s.lr;
        j["l_ce"] = s.loss.l_ce;
        j["l_bleu"] = s.loss.l_bleu;
        j["l_rougeL"] = s.loss.l_rougeL;
        j["l_br"] = s.loss.l_br;
        j["l_final"] = s.loss.l_final;
        j["mode"] = scale_mode_name(mode);
        j["params_hash"] = s.param_hash;
        out << j.dump() << '\n';
    }
}

ModelParams train(ModelParams params, const std::vector<EncodedExample>& dataset,
                  const TrainConfig& config, TrainTrace& trace) {
    if (dataset.empty()) throw ArgError("train: empty dataset");
    if (config.epochs < 1 || config.batch_size < 1 || config.lr <= 0.0)
        throw ConfigError("train: epochs and batch_size must be >= 1 and lr > 0");
    if (config.warmup_ratio < 0.0 || config.warmup_ratio >= 1.0)
        throw ConfigError("train: warmup_ratio must be in [0, 1)");
    if (config.stage == Stage::S3 && !config.scale_config)
        throw ConfigError("train: stage S3 requires a scale config");

    std::set<ParamGroup> trainable =
        config.trainable.empty() ? default_trainable(config.stage) : config.trainable;
    if (config.stage == Stage::S0 &&
        trainable != std::set<ParamGroup>{ParamGroup::map_visual})
        throw ConfigError("train: stage S0 trains the mapping layer only");
    if (config.stage != Stage::S0)
        for (ParamGroup g : {ParamGroup::embed, ParamGroup::core, ParamGroup::out})
            if (trainable.count(g) == 0)
                throw ConfigError("train: stages S1-S3 must train embed, core and out");

    const int n = static_cast<int>(dataset.size());
    const int steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const int total_steps = config.epochs * steps_per_epoch;

    Rng rng(config.seed);
    std::vector<int> order(dataset.size());
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        for (int start = 0; start < n; start += config.batch_size) {
            std::vector<EncodedExample> batch;
            for (int i = start; i < std::min(n, start + config.batch_size); ++i)
                batch.push_back(dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);

            const double lr = lr_at_step(config, step, total_steps);
            auto [loss, grads] =
                loss_and_grads(params, batch, config.stage, config.scale_config, trainable);

            if (!std::isfinite(loss.l_final) || !std::isfinite(loss.l_ce)) {
                TraceStep abort_step{step, lr, loss, all_param_hashes(params)};
                trace.steps.push_back(std::move(abort_step));
                throw NumericError("train: non-finite loss at step " + std::to_string(step));
            }

            if (trainable.count(ParamGroup::map_visual) > 0) {
                sgd_step(params.map_w, grads.map_w, lr);
                sgd_step(params.map_b, grads.map_b, lr);
            }
            if (trainable.count(ParamGroup::embed) > 0) sgd_step(params.embed, grads.embed, lr);
            if (trainable.count(ParamGroup::core) > 0) {
                sgd_step(params.pos, grads.pos, lr);
                sgd_step(params.wq, grads.wq, lr);
                sgd_step(params.wk, grads.wk, lr);
                sgd_step(params.wv, grads.wv, lr);
                sgd_step(params.w1, grads.w1, lr);
                sgd_step(params.b1, grads.b1, lr);
                sgd_step(params.w2, grads.w2, lr);
                sgd_step(params.b2, grads.b2, lr);
            }
            if (trainable.count(ParamGroup::out) > 0) {
                sgd_step(params.out_w, grads.out_w, lr);
                sgd_step(params.out_b, grads.out_b, lr);
            }

            trace.steps.push_back(TraceStep{step, lr, loss, all_param_hashes(params)});
            ++step;
        }
    }
    return params;
}

std::vector<int> greedy_decode(const ModelParams& params, const std::vector<int>& prompt,
                               const std::vector<double>& visual, int max_len) {
    if (max_len < 1) throw ArgError("greedy_decode: max_len must be >= 1");
    std::vector<int> ids = prompt;
    std::vector<int> continuation;
    for (int emitted = 0; emitted < max_len; ++emitted) {
        if (static_cast<int>(ids.size()) >= params.context) break;
        const TokenDistSeq probs = forward(params, ids, visual);
        const auto& dist = probs.back();
        // Argmax over emittable tokens: PAD and IMAGE are structural and can
        // never legally continue the text (IMAGE must stay unique).
        int next = -1;
        for (int v = 0; v < static_cast<int>(dist.size()); ++v) {
            if (v == Vocab::kPad || v == Vocab::kImage) continue;
            if (next < 0 || dist[static_cast<std::size_t>(v)] >
                                dist[static_cast<std::size_t>(next)])
                next = v;
        }
        if (next == Vocab::kStop) break;
        continuation.push_back(next);
        ids.push_back(next);
    }
    return continuation;
}

std::vector<double> target_logprobs(const ModelParams& params, const EncodedExample& ex) {
    const TokenDistSeq probs = forward(params, ex.ids, ex.visual);
    std::vector<double> out;
    for (std::size_t t = 0; t + 1 < ex.ids.size(); ++t) {
        if (!ex.target_mask[t + 1]) continue;
        const double p =
            std::max(probs[t][static_cast<std::size_t>(ex.ids[t + 1])], 1e-12);
        out.push_back(std::log(p));
    }
    return out;
}

double dataset_cross_entropy(const ModelParams& params,
                             const std::vector<EncodedExample>& dataset) {
    if (dataset.empty()) throw ArgError("dataset_cross_entropy: empty dataset");
    double sum = 0.0;
    for (const EncodedExample& ex : dataset) {
        const std::vector<double> lps = target_logprobs(params, ex);
        double ce = 0.0;
        for (double lp : lps) ce -= lp;
        sum += ce / static_cast<double>(lps.size());
    }
    return sum / static_cast<double>(dataset.size());
}

}  // namespace rforge
