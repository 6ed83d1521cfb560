#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

#include "tinyadapt/gradcheck.hpp"
#include "tinyadapt/model.hpp"

using namespace tinyadapt;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_ff = 12;
    c.vocab_size = 11;
    c.max_seq_len = 16;
    return c;
}

// Weights with larger spread than the default init so that the reference
// comparison exercises every nonlinearity.
ModelWeights spread_model(const ModelConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    auto w = init_model(c, rng);
    for (auto& [name, t] : w.params) {
        auto v = t.mutable_data();
        for (auto& x : v) x = is_norm_gain(name) ? static_cast<float>(1.0 + 0.3 * rng.normal())
                                                  : static_cast<float>(0.4 * rng.normal());
    }
    return w;
}

using Mat = std::vector<std::vector<double>>;

// Straight-line double-precision transformer written from the architecture
// description, sharing nothing with the library except the weight values.
struct Reference {
    const ModelWeights& w;

    Mat get(const std::string& name) const {
        const auto& t = w.at(name);
        Mat m(t.dim(0), std::vector<double>(t.dim(1)));
        for (std::size_t i = 0; i < t.dim(0); ++i)
            for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
        return m;
    }
    std::vector<double> vec(const std::string& name) const {
        const auto& t = w.at(name);
        return {t.data().begin(), t.data().end()};
    }
    static std::vector<double> project(const std::vector<double>& x, const Mat& wt) {  // wt is [out x in]
        std::vector<double> y(wt.size(), 0.0);
        for (std::size_t o = 0; o < wt.size(); ++o)
            for (std::size_t i = 0; i < x.size(); ++i) y[o] += wt[o][i] * x[i];
        return y;
    }
    std::vector<double> norm(const std::vector<double>& x, const std::vector<double>& g) const {
        double ss = 0;
        for (const double v : x) ss += v * v;
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + w.config.norm_eps);
        std::vector<double> y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * g[i];
        return y;
    }
    void rotate(std::vector<double>& x, std::size_t pos) const {
        const std::size_t hd = w.config.head_dim();
        for (std::size_t h = 0; h < w.config.n_heads; ++h)
            for (std::size_t i = 0; i < hd / 2; ++i) {
                const double ang = static_cast<double>(pos) * std::pow(w.config.rope_theta, -2.0 * i / hd);
                double& a = x[h * hd + 2 * i];
                double& b = x[h * hd + 2 * i + 1];
                const double a0 = a, b0 = b;
                a = a0 * std::cos(ang) - b0 * std::sin(ang);
                b = a0 * std::sin(ang) + b0 * std::cos(ang);
            }
    }

    Mat logits(const std::vector<TokenId>& ids) const {
        const auto& c = w.config;
        const auto emb = get("tok_embeddings");
        Mat h;
        for (const auto id : ids) h.push_back(emb[static_cast<std::size_t>(id)]);
        const std::size_t T = ids.size(), hd = c.head_dim();
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            const auto p = layer_prefix(l);
            Mat q(T), k(T), v(T);
            for (std::size_t t = 0; t < T; ++t) {
                const auto a = norm(h[t], vec(p + "attn_norm"));
                q[t] = project(a, get(p + "attn.q"));
                k[t] = project(a, get(p + "attn.k"));
                v[t] = project(a, get(p + "attn.v"));
                rotate(q[t], t);
                rotate(k[t], t);
            }
            Mat att(T, std::vector<double>(c.d_model, 0.0));
            for (std::size_t head = 0; head < c.n_heads; ++head)
                for (std::size_t t = 0; t < T; ++t) {
                    std::vector<double> s(t + 1);
                    double mx = -1e300, z = 0;
                    for (std::size_t u = 0; u <= t; ++u) {
                        double dot = 0;
                        for (std::size_t j = 0; j < hd; ++j) dot += q[t][head * hd + j] * k[u][head * hd + j];
                        s[u] = dot / std::sqrt(static_cast<double>(hd));
                        mx = std::max(mx, s[u]);
                    }
                    for (auto& x : s) z += (x = std::exp(x - mx));
                    for (std::size_t u = 0; u <= t; ++u)
                        for (std::size_t j = 0; j < hd; ++j) att[t][head * hd + j] += s[u] / z * v[u][head * hd + j];
                }
            for (std::size_t t = 0; t < T; ++t) {
                const auto o = project(att[t], get(p + "attn.o"));
                for (std::size_t j = 0; j < c.d_model; ++j) h[t][j] += o[j];
                const auto f = norm(h[t], vec(p + "ffn_norm"));
                auto g = project(f, get(p + "ffn.gate"));
                const auto u = project(f, get(p + "ffn.up"));
                for (std::size_t j = 0; j < g.size(); ++j) g[j] = g[j] / (1.0 + std::exp(-g[j])) * u[j];
                const auto dn = project(g, get(p + "ffn.down"));
                for (std::size_t j = 0; j < c.d_model; ++j) h[t][j] += dn[j];
            }
        }
        const auto head = get("output");  // [d x V]
        Mat out(T, std::vector<double>(c.vocab_size, 0.0));
        for (std::size_t t = 0; t < T; ++t) {
            const auto n = norm(h[t], vec("norm"));
            for (std::size_t j = 0; j < c.vocab_size; ++j)
                for (std::size_t i = 0; i < c.d_model; ++i) out[t][j] += n[i] * head[i][j];
        }
        return out;
    }

    double logprob(const std::vector<TokenId>& prefix, TokenId next) const {
        const auto row = logits(prefix).back();
        double mx = -1e300, z = 0;
        for (const double v : row) mx = std::max(mx, v);
        for (const double v : row) z += std::exp(v - mx);
        return row[static_cast<std::size_t>(next)] - mx - std::log(z);
    }
};

std::vector<TokenId> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
    std::vector<TokenId> ids(n);
    for (auto& x : ids) x = static_cast<TokenId>(rng.below(vocab));
    return ids;
}

}  // namespace

TEST(Config, Validation) {
    ModelConfig c;
    EXPECT_NO_THROW(c.validate());
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ModelConfig{};
    c.d_model = 12;
    c.n_heads = 4;  // head dim 3 is odd
    EXPECT_THROW(c.validate(), ConfigError);
    c = ModelConfig{};
    c.max_seq_len = 15;
    EXPECT_THROW(c.validate(), ConfigError);
    c = ModelConfig{};
    c.n_layers = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    Rng rng(0);
    EXPECT_THROW(init_model(c, rng), ConfigError);
}

TEST(Init, DeterministicAndNormGainsAreOne) {
    Rng a(5), b(5);
    const auto w1 = init_model(ModelConfig{}, a);
    const auto w2 = init_model(ModelConfig{}, b);
    for (const auto& [name, t] : w1.params) {
        const auto& u = w2.at(name);
        ASSERT_TRUE(std::equal(t.data().begin(), t.data().end(), u.data().begin())) << name;
        if (is_norm_gain(name))
            for (const float x : t.data()) EXPECT_EQ(x, 1.0f);
    }
}

TEST(Init, ParameterCountClosedForm) {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 32;
    c.n_heads = 4;
    c.d_ff = 64;
    c.vocab_size = 512;
    Rng rng(1);
    // embedding 16384 + 2 * (norms 64 + qkvo 4096 + gate/up 4096 + down 2048) + final norm 32 + head 16384
    EXPECT_EQ(init_model(c, rng).parameter_count(), 53408u);
}

TEST(Init, ScaleIsAboutPointZeroTwo) {
    Rng rng(2);
    const auto w = init_model(ModelConfig{}, rng);
    double ss = 0;
    std::size_t n = 0;
    for (const float x : w.at("tok_embeddings").data()) {
        ss += static_cast<double>(x) * x;
        ++n;
    }
    EXPECT_NEAR(std::sqrt(ss / n), 0.02, 0.001);
}

TEST(Forward, MatchesReferenceImplementation) {
    const auto c = tiny_config();
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto w = spread_model(c, seed);
        Rng rng(seed + 100);
        const auto ids = random_ids(rng, 9, c.vocab_size);
        const auto got = forward(w, ids);
        const auto want = Reference{w}.logits(ids);
        for (std::size_t t = 0; t < ids.size(); ++t)
            for (std::size_t j = 0; j < c.vocab_size; ++j)
                ASSERT_NEAR(got.at(t, j), want[t][j], 1e-4 * std::max(1.0, std::abs(want[t][j]))) << t << "," << j;
    }
}

TEST(Forward, SingleTokenShape) {
    Rng rng(3);
    const auto w = init_model(tiny_config(), rng);
    const std::vector<TokenId> one{4};
    EXPECT_EQ(forward(w, one).shape(), (Shape{1, 11}));
}

TEST(Forward, LengthLimits) {
    Rng rng(4);
    const auto w = init_model(tiny_config(), rng);
    EXPECT_THROW(forward(w, std::vector<TokenId>(17, 1)), LengthError);
    EXPECT_THROW(forward(w, std::vector<TokenId>{}), LengthError);
    EXPECT_NO_THROW(forward(w, std::vector<TokenId>(16, 1)));
}

TEST(Forward, Causality) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 7);
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        auto ids = random_ids(rng, 12, c.vocab_size);
        const std::size_t cut = 1 + rng.below(10);
        const auto before = forward(w, ids);
        for (std::size_t t = cut; t < ids.size(); ++t) ids[t] = static_cast<TokenId>(rng.below(c.vocab_size));
        const auto after = forward(w, ids);
        for (std::size_t t = 0; t < cut; ++t)
            for (std::size_t j = 0; j < c.vocab_size; ++j) ASSERT_EQ(before.at(t, j), after.at(t, j));
    }
}

TEST(Forward, FullModelGradientCheck) {
    const auto c = tiny_config();
    const auto wd = spread_model(c, 9).cast<double>();
    Rng rng(10);
    const auto ids = random_ids(rng, 8, c.vocab_size);
    std::vector<TensorT<double>> params;
    for (const auto& [_, t] : wd.params) params.push_back(t);
    const std::span<const TokenId> s(ids);
    const auto loss = [&] {
        std::vector<bool> mask(7, true);
        return cross_entropy_next_token(forward(wd, s.first(7)), s.subspan(1), mask);
    };
    FiniteDiffOptions opts;
    opts.max_entries_per_param = 6;
    EXPECT_LT(finite_diff_check<double>(loss, params, 1e-3, opts), 1e-3);
}

TEST(Loglikelihood, SingleTokenIsLogSoftmaxEntry) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 11);
    const std::vector<TokenId> prompt{1, 2, 3};
    const std::vector<TokenId> cont{5};
    const auto lp = log_softmax_rows(forward(w, prompt));
    EXPECT_NEAR(loglikelihood(w, prompt, cont).sum_logprob, lp.at(2, 5), 1e-6);
}

TEST(Loglikelihood, MatchesBruteForceEnumeration) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 12);
    const Reference ref{w};
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        const auto prompt = random_ids(rng, 1 + rng.below(5), c.vocab_size);
        const auto cont = random_ids(rng, 1 + rng.below(5), c.vocab_size);
        double want = 0;
        bool greedy = true;
        std::vector<TokenId> prefix = prompt;
        for (const auto tok : cont) {
            want += ref.logprob(prefix, tok);
            const auto row = ref.logits(prefix).back();
            const auto best = std::max_element(row.begin(), row.end()) - row.begin();
            greedy = greedy && best == tok;
            prefix.push_back(tok);
        }
        const auto got = loglikelihood(w, prompt, cont);
        EXPECT_NEAR(got.sum_logprob, want, 1e-4);
        EXPECT_EQ(got.is_greedy, greedy);
    }
}

TEST(Loglikelihood, AdditiveOverSplits) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 14);
    const std::vector<TokenId> prompt{3, 1};
    const std::vector<TokenId> cont{4, 9, 2, 7};
    const double whole = loglikelihood(w, prompt, cont).sum_logprob;
    for (std::size_t k = 1; k < cont.size(); ++k) {
        std::vector<TokenId> p2 = prompt;
        p2.insert(p2.end(), cont.begin(), cont.begin() + static_cast<std::ptrdiff_t>(k));
        const std::vector<TokenId> head(cont.begin(), cont.begin() + static_cast<std::ptrdiff_t>(k));
        const std::vector<TokenId> tail(cont.begin() + static_cast<std::ptrdiff_t>(k), cont.end());
        EXPECT_NEAR(loglikelihood(w, prompt, head).sum_logprob + loglikelihood(w, p2, tail).sum_logprob, whole, 1e-5);
    }
}

TEST(Loglikelihood, GreedyFlagFollowsArgmax) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 15);
    const std::vector<TokenId> prompt{2, 6};
    SamplingParams p;
    p.max_new_tokens = 3;
    const auto greedy = generate(w, prompt, p);
    ASSERT_EQ(greedy.size(), 3u);
    EXPECT_TRUE(loglikelihood(w, prompt, greedy).is_greedy);
    auto other = greedy;
    other[1] = (other[1] + 1) % 11;
    EXPECT_FALSE(loglikelihood(w, prompt, other).is_greedy);
}

TEST(Loglikelihood, Errors) {
    Rng rng(16);
    const auto w = init_model(tiny_config(), rng);
    const std::vector<TokenId> none;
    const std::vector<TokenId> one{1};
    EXPECT_THROW(loglikelihood(w, one, none), DataError);
    EXPECT_THROW(loglikelihood(w, none, one), DataError);
    EXPECT_THROW(loglikelihood(w, std::vector<TokenId>(10, 1), std::vector<TokenId>(7, 1)), LengthError);
}

TEST(Sampling, GreedyIsRepeatedArgmax) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 17);
    std::vector<TokenId> ctx{1, 2};
    SamplingParams p;
    p.max_new_tokens = 6;
    p.top_p = 0.3;  // ignored at temperature 0
    const auto out = generate(w, ctx, p);
    for (const auto tok : out) {
        const auto lg = forward(w, ctx);
        const auto row = lg.data().subspan((ctx.size() - 1) * c.vocab_size, c.vocab_size);
        EXPECT_EQ(tok, std::max_element(row.begin(), row.end()) - row.begin());
        ctx.push_back(tok);
    }
    EXPECT_EQ(generate(w, std::vector<TokenId>{1, 2}, p), out);
}

TEST(Sampling, StopOnFirstTokenYieldsNothing) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 18);
    const std::vector<TokenId> prompt{3};
    SamplingParams p;
    p.max_new_tokens = 5;
    const auto first = generate(w, prompt, p).front();
    p.stop_ids = {first};
    EXPECT_TRUE(generate(w, prompt, p).empty());
}

TEST(Sampling, StopsAtContextLimit) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 19);
    SamplingParams p;
    p.max_new_tokens = 100;
    EXPECT_EQ(generate(w, std::vector<TokenId>(10, 1), p).size(), 6u);
}

TEST(Sampling, SeededDeterminism) {
    const auto c = tiny_config();
    const auto w = spread_model(c, 20);
    SamplingParams p;
    p.temperature = 1.0;
    p.top_p = 0.9;
    p.max_new_tokens = 8;
    p.seed = 42;
    const std::vector<TokenId> prompt{1, 2};
    EXPECT_EQ(generate(w, prompt, p), generate(w, prompt, p));
}

TEST(Sampling, ParamValidation) {
    SamplingParams p;
    p.top_p = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = SamplingParams{};
    p.temperature = -1.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = SamplingParams{};
    p.max_new_tokens = 0;
    EXPECT_THROW(p.validate(), ConfigError);
}

namespace {

// Nucleus set by enumeration: every prefix of the probability-sorted list,
// keeping the shortest one whose mass reaches top_p.
std::map<TokenId, double> nucleus(const std::vector<double>& probs, double top_p) {
    std::vector<std::pair<double, TokenId>> sorted;
    for (std::size_t i = 0; i < probs.size(); ++i) sorted.emplace_back(probs[i], static_cast<TokenId>(i));
    std::stable_sort(sorted.begin(), sorted.end(), [](auto a, auto b) { return a.first > b.first; });
    for (std::size_t len = 1; len <= sorted.size(); ++len) {
        double mass = 0;
        for (std::size_t i = 0; i < len; ++i) mass += sorted[i].first;
        if (mass >= top_p || len == sorted.size()) {
            std::map<TokenId, double> out;
            for (std::size_t i = 0; i < len; ++i) out[sorted[i].second] = sorted[i].first / mass;
            return out;
        }
    }
    return {};
}

}  // namespace

TEST(Sampling, NucleusHalfOnSixThreeOne) {
    const std::vector<float> logits{std::log(0.3f), std::log(0.6f), std::log(0.1f)};
    const auto set = nucleus({0.3, 0.6, 0.1}, 0.5);
    ASSERT_EQ(set.size(), 1u);
    ASSERT_EQ(set.begin()->first, 1);
    SamplingParams p;
    p.temperature = 1.0;
    p.top_p = 0.5;
    Rng rng(23);
    for (int i = 0; i < 2000; ++i) ASSERT_EQ(sample_token<float>(logits, p, rng), 1);
}

TEST(Sampling, NucleusFrequenciesMatchEnumeration) {
    const std::vector<double> probs{0.05, 0.4, 0.25, 0.2, 0.1};
    std::vector<float> logits;
    for (const double q : probs) logits.push_back(static_cast<float>(std::log(q)));
    for (const double top_p : {0.6, 0.8, 1.0}) {
        const auto want = nucleus(probs, top_p);
        SamplingParams p;
        p.temperature = 1.0;
        p.top_p = top_p;
        Rng rng(24);
        std::map<TokenId, int> hits;
        const int n = 20000;
        for (int i = 0; i < n; ++i) ++hits[sample_token<float>(logits, p, rng)];
        for (const auto& [tok, count] : hits) EXPECT_TRUE(want.contains(tok)) << "top_p " << top_p << " token " << tok;
        for (const auto& [tok, q] : want) EXPECT_NEAR(static_cast<double>(hits[tok]) / n, q, 0.015) << top_p;
    }
}

TEST(Sampling, GreedyTieGoesToLowestIndex) {
    const std::vector<float> logits{0.5f, 2.0f, 2.0f, 1.0f};
    SamplingParams p;
    Rng rng(0);
    EXPECT_EQ(sample_token<float>(logits, p, rng), 1);
}
