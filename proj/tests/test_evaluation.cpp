#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "tinyadapt/evaluation.hpp"

using namespace tinyadapt;

namespace {

struct Expected {
    double acc = 0, acc_norm = 0;
};

/// The gold choice wins iff it beats every earlier choice strictly and every
/// later choice weakly.
bool gold_wins(const std::vector<double>& s, std::size_t gold) {
    for (std::size_t j = 0; j < s.size(); ++j) {
        if (j < gold && !(s[gold] > s[j])) return false;
        if (j > gold && !(s[gold] >= s[j])) return false;
    }
    return true;
}

Expected brute_force(const McTask& task, const std::vector<std::vector<double>>& lps) {
    Expected e;
    for (std::size_t i = 0; i < task.items.size(); ++i) {
        const auto& item = task.items[i];
        std::vector<double> norm;
        for (std::size_t c = 0; c < item.choices.size(); ++c)
            norm.push_back(lps[i][c] / static_cast<double>(item.choices[c].size()));
        e.acc += gold_wins(lps[i], item.gold);
        e.acc_norm += gold_wins(norm, item.gold);
    }
    e.acc /= static_cast<double>(task.items.size());
    e.acc_norm /= static_cast<double>(task.items.size());
    return e;
}

std::string random_word(Rng& rng, std::size_t min_len, std::size_t max_len) {
    std::string s(min_len + rng.below(max_len - min_len + 1), 'a');
    for (auto& c : s) c = static_cast<char>('a' + rng.below(26));
    if (rng.below(4) == 0) s += "è";
    return s;
}

/// Random item set with coarse scores so that ties happen.
struct Suite {
    McTask task;
    std::vector<std::vector<double>> lps;
};

Suite random_suite(Rng& rng, std::size_t n, bool equal_lengths) {
    Suite s;
    s.task.name = "rand";
    for (std::size_t i = 0; i < n; ++i) {
        McItem item;
        item.context = "ctx" + std::to_string(i);
        const std::size_t k = 2 + rng.below(4);
        const std::size_t len = 1 + rng.below(6);
        std::vector<double> lp;
        for (std::size_t c = 0; c < k; ++c) {
            item.choices.push_back(equal_lengths ? std::to_string(c) + std::string(len, 'x')
                                                 : std::to_string(c) + random_word(rng, 0, 8));
            lp.push_back(-0.5 * static_cast<double>(rng.below(12)));
        }
        item.gold = rng.below(k);
        s.task.items.push_back(item);
        s.lps.push_back(lp);
    }
    return s;
}

RiggedModel rig(const Suite& s, double a = 1.0, double b = 0.0) {
    RiggedModel m;
    for (std::size_t i = 0; i < s.task.items.size(); ++i)
        for (std::size_t c = 0; c < s.task.items[i].choices.size(); ++c)
            m.set_loglikelihood(s.task.items[i].context, s.task.items[i].choices[c], a * s.lps[i][c] + b);
    return m;
}

EvalReport report(std::string model, const std::vector<double>& scores) {
    static const std::vector<std::pair<std::string, std::string>> rows{
        {"winogrande", "acc"},   {"truthfulqa", "acc"},          {"mmlu", "acc"},
        {"hellaswag", "acc"},    {"hellaswag", "acc_norm"},      {"gsm8k", "strict-match"},
        {"gsm8k", "flexible-extract"}, {"arc_challenge", "acc"}, {"arc_challenge", "acc_norm"}};
    EvalReport r;
    r.model = std::move(model);
    for (std::size_t i = 0; i < rows.size(); ++i) r.rows.push_back({rows[i].first, rows[i].second, scores[i]});
    return r;
}

}  // namespace

TEST(MultipleChoice, HandArithmetic) {
    McTask task{"t", {{"q", {"abcd", "ab"}, 0}}};
    RiggedModel m;
    m.set_loglikelihood("q", "abcd", -10.0);
    m.set_loglikelihood("q", "ab", -6.0);
    const auto s = eval_multiple_choice(m, task);
    EXPECT_EQ(s.acc, 0.0);
    EXPECT_EQ(s.acc_norm, 1.0);
}

TEST(MultipleChoice, AllMassOnGold) {
    McTask task{"t", {{"q", {"no", "yes", "maybe"}, 1}}};
    RiggedModel m;
    m.set_loglikelihood("q", "no", -1e30);
    m.set_loglikelihood("q", "yes", 0.0);
    m.set_loglikelihood("q", "maybe", -1e30);
    const auto s = eval_multiple_choice(m, task);
    EXPECT_EQ(s.acc, 1.0);
    EXPECT_EQ(s.acc_norm, 1.0);
}

TEST(MultipleChoice, TiesGoToLowestIndex) {
    McTask task{"t", {{"q", {"a", "b"}, 0}, {"r", {"a", "b"}, 1}}};
    RiggedModel m;
    for (const auto* ctx : {"q", "r"}) {
        m.set_loglikelihood(ctx, "a", -2.0);
        m.set_loglikelihood(ctx, "b", -2.0);
    }
    EXPECT_EQ(eval_multiple_choice(m, task).acc, 0.5);
}

TEST(MultipleChoice, MatchesBruteForceOnFiftyItems) {
    Rng rng(71);
    const auto s = random_suite(rng, 50, false);
    const auto got = eval_multiple_choice(rig(s), s.task);
    const auto want = brute_force(s.task, s.lps);
    EXPECT_EQ(got.acc, want.acc);
    EXPECT_EQ(got.acc_norm, want.acc_norm);
}

TEST(MultipleChoice, EqualByteLengthsMakeMetricsAgree) {
    Rng rng(72);
    for (int round = 0; round < 20; ++round) {
        const auto s = random_suite(rng, 50, true);
        const auto got = eval_multiple_choice(rig(s), s.task);
        EXPECT_EQ(got.acc, got.acc_norm);
    }
}

TEST(MultipleChoice, AffineInvariance) {
    Rng rng(73);
    const auto s = random_suite(rng, 1000, false);
    const auto base = eval_multiple_choice(rig(s), s.task);
    const auto eq = random_suite(rng, 1000, true);
    const auto eq_base = eval_multiple_choice(rig(eq), eq.task);
    for (const double a : {0.25, 1.0, 3.0}) {
        for (const double b : {-7.0, 0.0, 2.5}) {
            // Raw sums keep their order under any positive affine map.
            EXPECT_EQ(eval_multiple_choice(rig(s, a, b), s.task).acc, base.acc);
            const auto shifted = eval_multiple_choice(rig(eq, a, b), eq.task);
            EXPECT_EQ(shifted.acc, eq_base.acc);
            EXPECT_EQ(shifted.acc_norm, eq_base.acc_norm);
        }
        // Length-normalized scores keep their order under positive scaling.
        EXPECT_EQ(eval_multiple_choice(rig(s, a, 0.0), s.task).acc_norm, base.acc_norm);
    }
}

TEST(MultipleChoice, ValidationAndItemErrors) {
    RiggedModel m;
    EXPECT_THROW(eval_multiple_choice(m, McTask{"t", {{"q", {"a"}, 0}}}), DataError);
    EXPECT_THROW(eval_multiple_choice(m, McTask{"t", {{"q", {"a", "b"}, 2}}}), DataError);
    EXPECT_THROW(eval_multiple_choice(m, McTask{"t", {}}), DataError);

    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    cfg.vocab_size = 300;
    cfg.max_seq_len = 16;
    Rng rng(74);
    const auto model = AdaptedModel::dense(init_model(cfg, rng));
    const auto vocab = train_bpe({"ab"}, 260);
    const TransformerScorer scorer(model, vocab);
    const auto s = eval_multiple_choice(scorer, McTask{"t", {{std::string(40, 'q'), {"a", "b"}, 0}, {"q", {"a", "b"}, 0}}});
    EXPECT_EQ(s.item_errors, 1u);
    EXPECT_LE(s.acc, 0.5);
}

TEST(Extraction, Strict) {
    EXPECT_EQ(extract_strict("ragionamento\n#### 42"), "42");
    EXPECT_EQ(extract_strict("the answer is 42"), std::nullopt);
    EXPECT_EQ(extract_strict("#### 3.50\n#### 7"), "7");
    EXPECT_EQ(extract_strict("x #### 5"), std::nullopt);
    EXPECT_EQ(extract_strict("####  9  \nfine"), "9");
}

TEST(Extraction, Flexible) {
    EXPECT_EQ(extract_flexible("costa 3 euro e 50, totale 3.50"), "3.50");
    EXPECT_EQ(extract_flexible("nessun numero"), std::nullopt);
    EXPECT_EQ(extract_flexible("1,234 then 5"), "5");
    EXPECT_EQ(extract_flexible("only 1,234"), "1234");
    EXPECT_EQ(extract_flexible("saldo -12.5"), "-12.5");
}

TEST(Generative, StrictFlexibleAndNormalization) {
    RiggedModel m;
    m.set_generation("a", "conto\n#### 42");
    m.set_generation("b", "forse 40, anzi 41");
    m.set_generation("c", "#### 1,234");
    m.set_generation("d", "#### 7.0");
    const SamplingParams greedy;
    EXPECT_EQ(eval_generative(m, GenTask{"g", {{"a", "42"}}, ExtractionMode::strict}, greedy).score, 1.0);
    EXPECT_EQ(eval_generative(m, GenTask{"g", {{"b", "42"}}, ExtractionMode::flexible}, greedy).score, 0.0);
    EXPECT_EQ(eval_generative(m, GenTask{"g", {{"c", "1234"}, {"d", "7"}}, ExtractionMode::strict}, greedy).score, 1.0);
    const auto missing = eval_generative(m, GenTask{"g", {{"a", "42"}, {"zz", "1"}}, ExtractionMode::flexible}, greedy);
    EXPECT_EQ(missing.score, 0.5);
    EXPECT_EQ(missing.item_errors, 1u);
    EXPECT_THROW(eval_generative(m, GenTask{"g", {{"a", ""}}, ExtractionMode::strict}, greedy), DataError);
}

TEST(TableAverage, PublishedColumns) {
    const double anita_en = table_average({0.7609, 0.7124, 0.6354, 0.7430, 0.8856, 0.6035, 0.6088, 0.6775, 0.6988});
    EXPECT_NEAR(anita_en, 0.7029, 0.00005);
    const double anita_it = table_average({0.5672, 0.5714, 0.7093});
    EXPECT_NEAR(anita_it, 0.616, 0.0005);
    EXPECT_NEAR(table_average({0.7348, 0.5404, 0.6366, 0.5865, 0.7799, 0.7195, 0.7172, 0.477, 0.506}), 0.6331, 0.00005);
    EXPECT_NEAR(table_average({0.5324, 0.5475, 0.6728}), 0.584, 0.0005);
    EXPECT_NEAR(table_average({0.6084, 0.5004, 0.6566}), 0.588, 0.0005);
    EXPECT_NEAR(table_average({0.572, 0.546, 0.6528}), 0.59, 0.0005);
}

TEST(TableAverage, TrivialCases) {
    EXPECT_EQ(table_average({0.42}), 0.42);
    for (const double v : {0.0, 0.125, 0.5, 1.0}) EXPECT_EQ(table_average(std::vector<double>(7, v)), v);
    EXPECT_THROW(table_average({}), DataError);
}

TEST(RenderReport, PublishedLayout) {
    const auto a = report("llama3", {0.7182, 0.4397, 0.6397, 0.5767, 0.7586, 0.7551, 0.7536, 0.5307, 0.5691});
    const auto b = report("anita", {0.7609, 0.7124, 0.6354, 0.7430, 0.8856, 0.6035, 0.6088, 0.6775, 0.6988});
    const std::string want =
        "Tasks\tMetric\tllama3\tanita\n"
        "winogrande\tacc\t0.7182\t0.7609\n"
        "truthfulqa\tacc\t0.4397\t0.7124\n"
        "mmlu\tacc\t0.6397\t0.6354\n"
        "hellaswag\tacc\t0.5767\t0.7430\n"
        "\tacc_norm\t0.7586\t0.8856\n"
        "gsm8k\tstrict-match\t0.7551\t0.6035\n"
        "\tflexible-extract\t0.7536\t0.6088\n"
        "arc_challenge\tacc\t0.5307\t0.6775\n"
        "\tacc_norm\t0.5691\t0.6988\n"
        "Average:\t\t0.6379\t0.7029\n";
    EXPECT_EQ(render_report({a, b}), want);
}

TEST(RenderReport, SmallCasesAndMismatch) {
    EvalReport one{"m", {{"t", "acc", 0.5}}, 0};
    EXPECT_EQ(render_report({one}), "Tasks\tMetric\tm\nt\tacc\t0.5000\nAverage:\t\t0.5000\n");
    EvalReport other{"n", {{"t", "acc_norm", 0.5}}, 0};
    try {
        render_report({one, other});
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("t/acc_norm"), std::string::npos);
    }
    const auto x = EvalReport{"first", {{"t", "acc", 0.1}}, 0};
    const auto y = EvalReport{"second", {{"t", "acc", 0.9}}, 0};
    EXPECT_EQ(render_report({y, x}).substr(0, 26), "Tasks\tMetric\tsecond\tfirst\n");
}

TEST(EvalReport, JsonRoundTrip) {
    const auto r = report("anita", {0.7609, 0.7124, 0.6354, 0.7430, 0.8856, 0.6035, 0.6088, 0.6775, 0.6988});
    const auto j = r.to_json();
    EXPECT_NEAR(j.at("average").get<double>(), 0.7029, 0.00005);
    const auto back = EvalReport::from_json(j);
    EXPECT_EQ(render_report({back}), render_report({r}));
    EXPECT_THROW(EvalReport::from_json(nlohmann::json{{"rows", 3}}), FormatError);
}

TEST(TransformerScorer, AgreesWithModelLoglikelihood) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.vocab_size = 300;
    cfg.max_seq_len = 32;
    Rng rng(75);
    const auto model = AdaptedModel::dense(init_model(cfg, rng));
    const auto vocab = train_bpe({"ciao mondo ciao"}, 270);
    const TransformerScorer scorer(model, vocab);
    std::vector<TokenId> ctx{vocab.bos()};
    const auto body = vocab.encode("ciao", true);
    ctx.insert(ctx.end(), body.begin(), body.end());
    const auto direct = loglikelihood(model.base, ctx, vocab.encode(" mondo", false));
    EXPECT_EQ(scorer.loglikelihood("ciao", " mondo").sum_logprob, direct.sum_logprob);
    SamplingParams p;
    p.max_new_tokens = 5;
    EXPECT_EQ(scorer.generate("ciao", p), scorer.generate("ciao", p));
}
