#include <doctest.h>

#include <cmath>

#include "babyit/fixtures.hpp"
#include "babyit/train.hpp"
#include "oracles.hpp"

using namespace babyit;
using namespace babyit::train;

namespace {

ModelConfig tiny(std::int64_t vocab = 13) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.hidden_size = 8;
    c.num_heads = 2;
    c.num_layers = 2;
    c.max_length = 16;
    c.init_std = 0.4;
    return c;
}

Example example(std::vector<TokenId> ids, std::vector<std::uint8_t> mask) {
    return Example{std::move(ids), std::move(mask)};
}

template <class T>
std::vector<ag::Matrix<T>> grads_of(Parameters<T>& p) {
    std::vector<ag::Matrix<T>> out;
    for (auto& t : p.named()) {
        out.push_back(t.tensor->grad);
    }
    return out;
}

template <class T>
std::vector<ag::Matrix<T>> values_of(Parameters<T>& p) {
    std::vector<ag::Matrix<T>> out;
    for (auto& t : p.named()) {
        out.push_back(t.tensor->value);
    }
    return out;
}

template <class T>
bool bitwise_equal(const std::vector<ag::Matrix<T>>& a, const std::vector<ag::Matrix<T>>& b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size() || std::memcmp(a[i].data(), b[i].data(), sizeof(T) * static_cast<std::size_t>(a[i].size())) != 0) {
            return false;
        }
    }
    return true;
}

std::vector<Example> toy_data(std::size_t n, std::uint64_t seed, TokenId vocab = 13) {
    Rng rng(seed);
    std::vector<Example> out;
    for (std::size_t i = 0; i < n; ++i) {
        Example e;
        const auto len = 3 + rng.below(8);
        for (std::size_t t = 0; t < len; ++t) {
            e.ids.push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab))));
            e.mask.push_back(t > 0 && rng.below(3) != 0);
        }
        e.mask[len - 1] = 1;
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

TEST_CASE("analytic gradients match central differences in double precision") {
    auto p = Parameters<double>::init(tiny(), 21);
    REQUIRE(p.count() <= 5000);
    const std::vector<Example> data{example({1, 5, 2, 8, 3, 3, 12, 0}, {0, 1, 1, 0, 1, 1, 0, 1}), example({4, 4, 9, 1, 7}, {0, 0, 1, 1, 1})};
    const auto gc = oracle::gradcheck(p, data);
    INFO("worst tensor " << gc.worst_tensor);
    CHECK(gc.max_relative_error < 1e-6);
    CHECK(gc.entries == static_cast<std::size_t>(p.count()));
}

TEST_CASE("gradient of a scalar product") {
    ag::Tensor<double> w(1, 1);
    w.value(0, 0) = 3.0;
    ag::Tape<double> tape;
    ag::Matrix<double> x(1, 1);
    x(0, 0) = 2.0;
    const auto y = ag::matmul(tape, tape.parameter(w), tape.constant(x));
    tape.backward(y);
    CHECK(w.grad(0, 0) == 2.0);
}

TEST_CASE("masked loss equals the explicit per-position loss") {
    auto p = Parameters<double>::init(tiny(), 3);
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const auto data = toy_data(1, rng.next());
        const auto& e = data[0];
        const auto logits = forward_logits(p, e.ids).logits;
        const double expected = oracle::masked_loss(oracle::to_mat(logits), e.ids, e.mask);
        CHECK(masked_cross_entropy(logits, e.ids, e.mask) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(std::abs(evaluate_loss(p, data) - expected) < 1e-6);
    }
}

TEST_CASE("all-true mask equals plain cross-entropy, uniform logits give ln V") {
    ag::Matrix<double> uniform = ag::Matrix<double>::Zero(4, 7);
    const std::vector<TokenId> targets{0, 3, 6, 1, 2};
    CHECK(masked_cross_entropy(uniform, targets, std::vector<std::uint8_t>{0, 1, 0, 1, 1}) == doctest::Approx(std::log(7.0)));
    ag::Matrix<double> logits = ag::Matrix<double>::Random(4, 7);
    double plain = 0.0;
    const auto lp = ag::log_softmax_rows(logits);
    for (std::size_t t = 1; t < targets.size(); ++t) {
        plain -= lp(static_cast<Eigen::Index>(t - 1), targets[t]);
    }
    CHECK(masked_cross_entropy(logits, targets, std::vector<std::uint8_t>{0, 1, 1, 1, 1}) == doctest::Approx(plain / 4.0));
    CHECK_THROWS(masked_cross_entropy(logits, targets, std::vector<std::uint8_t>{0, 0, 0, 0, 0}));
}

TEST_CASE("targets at unmasked positions never reach the gradient") {
    auto p = Parameters<double>::init(tiny(), 5);
    const std::vector<TokenId> ids{2, 7, 1, 1, 9, 4, 0, 6};
    const std::vector<std::uint8_t> mask{0, 0, 1, 0, 1, 0, 0, 1};
    auto run = [&](const std::vector<TokenId>& targets) {
        p.zero_grad();
        ag::Tape<double> tape;
        const auto vars = forward(tape, p, ids);
        tape.backward(masked_cross_entropy(tape, vars.logits, targets, mask, 3.0));
        return grads_of(p);
    };
    const auto base = run(ids);
    for (std::size_t t = 1; t < ids.size(); ++t) {
        if (mask[t]) {
            continue;
        }
        for (TokenId v = 0; v < 13; ++v) {
            auto targets = ids;
            targets[t] = v;
            CHECK(bitwise_equal(base, run(targets)));
        }
    }
    auto changed = ids;
    changed[2] = 11;
    CHECK_FALSE(bitwise_equal(base, run(changed)));
}

TEST_CASE("linear schedule keypoints") {
    const auto c = TrainConfig::pretrain();
    const std::size_t total = 50'000;
    CHECK(lr_at_step(c, 0, total) == 0.0);
    CHECK(lr_at_step(c, 5000, total) == doctest::Approx(2e-4).epsilon(1e-15));
    CHECK(lr_at_step(c, 2500, total) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(lr_at_step(c, total, total) == 0.0);
    for (std::size_t s = 0; s <= total; s += 37) {
        CHECK(std::abs(lr_at_step(c, s, total) - oracle::lr(c, s, total)) < 1e-12);
    }
    CHECK_THROWS(lr_at_step(c, total + 1, total));
}

TEST_CASE("cosine with restarts returns to the peak at every cycle start") {
    auto c = TrainConfig::instruction();
    const std::size_t total = 5500;
    c.num_cycles = 2;
    CHECK(lr_at_step(c, 500, total) == c.initial_lr);
    CHECK(lr_at_step(c, 500 + 2500, total) == c.initial_lr);
    CHECK(lr_at_step(c, total, total) == 0.0);
    CHECK(lr_at_step(c, 499, total) < c.initial_lr);
    for (std::size_t s = 0; s <= total; ++s) {
        REQUIRE(std::abs(lr_at_step(c, s, total) - oracle::lr(c, s, total)) < 1e-12);
    }
    c.num_cycles = 3;
    for (std::size_t s = 0; s <= total; ++s) {
        REQUIRE(std::abs(lr_at_step(c, s, total) - oracle::lr(c, s, total)) < 1e-12);
    }
}

TEST_CASE("reference training configurations") {
    const auto p = TrainConfig::pretrain();
    CHECK(p.initial_lr == 2e-4);
    CHECK(p.batch_size == 8);
    CHECK(p.max_epochs == 8);
    CHECK(p.warmup_steps == 5000);
    CHECK(p.scheduler == Scheduler::linear);
    const auto i = TrainConfig::instruction();
    CHECK(i.initial_lr == 2e-5);
    CHECK(i.max_epochs == 10);
    CHECK(i.warmup_steps == 500);
    CHECK(i.scheduler == Scheduler::cosine_with_restarts);
    CHECK(TrainConfig::from_json(i.to_json()) == i);
}

TEST_CASE("steps per epoch") {
    CHECK(steps_per_epoch(80, 8) == 10);
    CHECK(steps_per_epoch(81, 8) == 11);
    CHECK(steps_per_epoch(1, 8) == 1);
}

TEST_CASE("epoch order is a seeded permutation") {
    const auto a = epoch_order(50, 3, 1);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        CHECK(sorted[i] == i);
    }
    CHECK(a == epoch_order(50, 3, 1));
    CHECK(a != epoch_order(50, 3, 2));
    CHECK(a != epoch_order(50, 4, 1));
}

TEST_CASE("a batch without targets leaves everything untouched") {
    auto p = Parameters<double>::init(tiny(), 2);
    AdamW<double> opt;
    const auto before = values_of(p);
    const Example e = example({1, 2, 3}, {0, 0, 0});
    const Example* batch[] = {&e};
    const auto r = train_step(p, opt, std::span<const Example* const>(batch), 1e-2, 1.0);
    CHECK(r.skipped);
    CHECK(opt.step_count() == 0);
    CHECK(bitwise_equal(before, values_of(p)));
}

TEST_CASE("AdamW first step and decay exemptions") {
    OptimizerConfig oc;
    oc.weight_decay = 0.1;
    auto p = Parameters<double>::init(tiny(), 2);
    p.zero_grad();
    for (auto& t : p.named()) {
        t.tensor->grad.setConstant(0.5);
    }
    const auto before = values_of(p);
    AdamW<double> opt(oc);
    const double lr = 1e-2;
    opt.step(p, lr);
    auto named = p.named();
    for (std::size_t i = 0; i < named.size(); ++i) {
        const double w0 = before[i](0, 0);
        // Bias-corrected first step moves every entry by lr * g / (|g| + eps').
        const double adam = lr * 0.5 / (0.5 + oc.eps);
        const double expected = named[i].is_norm ? w0 - adam : w0 - adam - lr * oc.weight_decay * w0;
        CHECK(named[i].tensor->value(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("global gradient clipping") {
    auto p = Parameters<double>::init(tiny(), 2);
    p.zero_grad();
    p.embedding.grad(0, 0) = 3.0;
    p.final_norm.grad(0, 1) = 4.0;
    CHECK(clip_grad_norm(p, 1.0) == doctest::Approx(5.0));
    CHECK(p.embedding.grad(0, 0) == doctest::Approx(0.6));
    CHECK(p.final_norm.grad(0, 1) == doctest::Approx(0.8));
    CHECK(clip_grad_norm(p, 10.0) == doctest::Approx(1.0));
    CHECK(p.embedding.grad(0, 0) == doctest::Approx(0.6));
}

TEST_CASE("pack_documents joins with eos and chunks") {
    const auto chunks = pack_documents({{5, 6, 7}, {8, 9}}, 3);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0].ids == std::vector<TokenId>{5, 6, 7});
    CHECK(chunks[1].ids == std::vector<TokenId>{SpecialTokens::eos, 8, 9});
    CHECK(chunks[0].mask == std::vector<std::uint8_t>{0, 1, 1});
    const auto dropped = pack_documents({{5, 6, 7}}, 3);
    CHECK(dropped.size() == 1);
}

TEST_CASE("instruction examples mask the prompt") {
    const auto tok = Tokenizer::train({"where is the dog ? the dog is here ."}, 270);
    const auto e = instruction_example(tok, "where is the dog ?", "the dog is here .", 64);
    const auto prompt = tok.encode("where is the dog ?");
    const auto target = tok.encode("the dog is here .");
    REQUIRE(e.ids.size() == prompt.size() + target.size() + 3);
    CHECK(e.ids.front() == SpecialTokens::bos);
    CHECK(e.ids[prompt.size() + 1] == SpecialTokens::sep);
    CHECK(e.ids.back() == SpecialTokens::eos);
    for (std::size_t t = 0; t < e.ids.size(); ++t) {
        CHECK(static_cast<bool>(e.mask[t]) == (t > prompt.size() + 1));
    }
    CHECK(e.target_count() == target.size() + 1);

    const auto cut = instruction_example(tok, "where is the dog ? where is the dog ?", "the dog is here .", 12);
    CHECK(cut.ids.size() <= 12);
    CHECK(cut.ids.front() == SpecialTokens::bos);
    CHECK(cut.target_count() > 0);

    const auto padded = pad_to(e, e.ids.size() + 4);
    CHECK(padded.ids.back() == SpecialTokens::pad);
    CHECK(padded.target_count() == e.target_count());
}

TEST_CASE("train_run is deterministic and reduces loss") {
    ModelConfig c = tiny(20);
    c.init_std = 0.02;
    const auto data = toy_data(40, 1, 20);
    std::vector<Example> train(data.begin(), data.begin() + 32), val(data.begin() + 32, data.end());
    for (auto& e : train) {
        for (std::size_t t = 0; t < e.ids.size(); ++t) {
            e.ids[t] = static_cast<TokenId>(t % 5);
        }
    }
    for (auto& e : val) {
        for (std::size_t t = 0; t < e.ids.size(); ++t) {
            e.ids[t] = static_cast<TokenId>(t % 5);
        }
    }
    TrainConfig tc;
    tc.initial_lr = 1e-2;
    tc.batch_size = 4;
    tc.max_epochs = 4;
    tc.warmup_steps = 2;
    tc.seed = 9;
    auto a = Model::init(c, 1);
    auto b = Model::init(c, 1);
    std::vector<std::vector<std::size_t>> batches_a, batches_b;
    TrainHooks ha, hb;
    ha.on_batch = [&](std::size_t, std::size_t, std::span<const std::size_t> batch) { batches_a.emplace_back(batch.begin(), batch.end()); };
    hb.on_batch = [&](std::size_t, std::size_t, std::span<const std::size_t> batch) { batches_b.emplace_back(batch.begin(), batch.end()); };
    const auto ra = train_run(a, train, val, tc, ha);
    const auto rb = train_run(b, train, val, tc, hb);
    CHECK(batches_a == batches_b);
    CHECK(batches_a.size() == 4 * steps_per_epoch(32, 4));
    CHECK(bitwise_equal(values_of(a), values_of(b)));
    CHECK(ra.loss_csv() == rb.loss_csv());
    REQUIRE(ra.epochs.size() == 5);
    CHECK(ra.epochs[0].epoch == 0);
    CHECK(ra.epochs.back().val_loss < 0.5 * ra.epochs[0].val_loss);
    CHECK(ra.total_steps == 32);
}

TEST_CASE("validation loss falls on a small grammar corpus") {
    const auto docs = fixtures::child_directed_corpus(12000, 2);
    const auto tok = Tokenizer::train(docs, 320);
    std::vector<std::vector<TokenId>> ids;
    for (const auto& d : docs) {
        ids.push_back(tok.encode(d));
    }
    auto chunks = pack_documents(ids, 48);
    std::vector<Example> val(chunks.end() - static_cast<std::ptrdiff_t>(chunks.size() / 10), chunks.end());
    chunks.resize(chunks.size() - val.size());
    ModelConfig c;
    c.vocab_size = 320;
    c.hidden_size = 32;
    c.num_heads = 2;
    c.num_layers = 1;
    c.max_length = 64;
    TrainConfig tc;
    tc.initial_lr = 3e-3;
    tc.max_epochs = 3;
    tc.warmup_steps = 10;
    auto m = Model::init(c, 4);
    const auto r = train_run(m, chunks, val, tc);
    for (std::size_t e = 1; e < r.epochs.size(); ++e) {
        CHECK(r.epochs[e].val_loss < r.epochs[e - 1].val_loss);
    }
}

TEST_CASE("early stopping with patience") {
    ModelConfig c = tiny(20);
    const auto data = toy_data(24, 8, 20);
    std::vector<Example> train(data.begin(), data.begin() + 16), val(data.begin() + 16, data.end());
    TrainConfig tc;
    tc.initial_lr = 0.5;
    tc.batch_size = 4;
    tc.max_epochs = 30;
    tc.warmup_steps = 1;
    tc.patience = 1;
    auto m = Model::init(c, 1);
    const auto r = train_run(m, train, val, tc);
    CHECK(r.stopped_early);
    CHECK(r.epochs.size() < 31);
}
