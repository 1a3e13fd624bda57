#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "maskdiff/kernels.hpp"
#include "maskdiff/training.hpp"

using namespace maskdiff;

namespace {

Sequence seq(std::initializer_list<Token> toks) { return Sequence(toks); }

ToyDataset weighted_pair() {
    VocabSpec spec{2, 2};
    std::vector<LabeledExample> ex;
    ex.push_back({seq({Token::valid(1), Token::valid(1)}), std::nullopt, 2.0});
    ex.push_back({seq({Token::valid(1), Token::valid(2)}), std::nullopt, 1.0});
    return make_dataset(spec, 2, ex);
}

ToyDataset labeled_pair() {
    VocabSpec spec{2, 2};
    std::vector<LabeledExample> ex;
    ex.push_back({seq({Token::valid(1), Token::valid(2)}), 0, 1.0});
    ex.push_back({seq({Token::valid(2), Token::valid(1)}), 1, 1.0});
    return make_dataset(spec, 2, ex);
}

}  // namespace

TEST_CASE("loss_weight values per objective") {
    NoiseSchedule sched;
    for (double t : {0.1, 0.25, 0.5, 0.9}) {
        CHECK(loss_weight(LossKind::ddm_linear, t, sched) == 1.0 / t);
        // on the linear schedule the general weight collapses to 1/t bitwise
        CHECK(loss_weight(LossKind::ddm_general, t, sched) ==
              loss_weight(LossKind::ddm_linear, t, sched));
        CHECK(loss_weight(LossKind::mvtm, t, sched) == 1.0);
    }
}

TEST_CASE("select_batch is deterministic and weight proportional") {
    ToyDataset data = weighted_pair();
    Rng a(314), b(314);
    auto batch1 = select_batch(data, 16, a);
    auto batch2 = select_batch(data, 16, b);
    REQUIRE(batch1.size() == 16);
    for (size_t i = 0; i < batch1.size(); ++i) CHECK(batch1[i].x0 == batch2[i].x0);

    Rng c(55);
    int first = 0;
    const int n = 6000;
    auto big = select_batch(data, n, c);
    for (const LabeledExample &ex : big)
        if (ex.x0 == data.examples[0].x0) ++first;
    double sigma = std::sqrt((2.0 / 3) * (1.0 / 3) / n);
    CHECK(std::abs(double(first) / n - 2.0 / 3) < 3.0 * sigma);

    Rng d(1);
    CHECK_THROWS_AS(select_batch(data, 0, d), std::invalid_argument);
}

TEST_CASE("corrupt_examples replays bitwise from equal rng states") {
    ToyDataset data = labeled_pair();
    NoiseSchedule sched;
    Rng a(77), b(77);
    CorruptedBatch ca = corrupt_examples(data.examples, 1e-3, 0.5, sched, data.spec, a);
    CorruptedBatch cb = corrupt_examples(data.examples, 1e-3, 0.5, sched, data.spec, b);
    REQUIRE(ca.size() == cb.size());
    for (size_t i = 0; i < ca.size(); ++i) {
        CHECK(ca[i].t == cb[i].t);
        CHECK(ca[i].xt == cb[i].xt);
        CHECK(ca[i].label == cb[i].label);
        CHECK(ca[i].t >= 1e-3);
        CHECK(ca[i].t < 1.0);
    }
}

TEST_CASE("corrupt_examples honors the label drop extremes") {
    ToyDataset data = labeled_pair();
    NoiseSchedule sched;
    Rng rng(9);
    for (const CorruptedExample &ce :
         corrupt_examples(data.examples, 0.5, 0.0, sched, data.spec, rng)) {
        CHECK(ce.label.has_value());
    }
    for (const CorruptedExample &ce :
         corrupt_examples(data.examples, 0.5, 1.0, sched, data.spec, rng)) {
        CHECK(!ce.label.has_value());
    }
    Rng r2(9);
    CHECK_THROWS_AS(corrupt_examples(data.examples, 0.0, 0.5, sched, data.spec, r2),
                    std::invalid_argument);
}

TEST_CASE("loss on a hand-built single example") {
    ToyDataset data = weighted_pair();
    NoiseSchedule sched;
    ExactPosteriorDenoiser den(data, sched);

    // xt = (A, M); posterior marginal at the masked slot is (2/3, 1/3) and
    // the clean target there is B, so p_target = 1/3
    CorruptedBatch batch;
    batch.push_back({seq({Token::valid(1), Token::valid(2)}),
                     seq({Token::valid(1), Token::mask(1)}), 0.5, std::nullopt});

    double got = loss_value_on_batch(den, batch, LossKind::ddm_linear, sched);
    CHECK(std::abs(got - 2.0 * std::log(3.0)) < 1e-12);

    double flat = loss_value_on_batch(den, batch, LossKind::mvtm, sched);
    CHECK(std::abs(flat - std::log(3.0)) < 1e-12);
}

TEST_CASE("a batch with no masked positions scores zero loss") {
    ToyDataset data = weighted_pair();
    NoiseSchedule sched;
    LinearSoftmaxDenoiser den(data.spec, data.L, 0);
    CorruptedBatch batch;
    batch.push_back({data.examples[0].x0, data.examples[0].x0, 0.3, std::nullopt});
    CHECK(loss_value_on_batch(den, batch, LossKind::ddm_linear, sched) == 0.0);
    LossReport rep = loss_and_grad_on_batch(den, batch, LossKind::ddm_linear, sched);
    CHECK(rep.loss == 0.0);
    CHECK(rep.masked_positions == 0);
    for (double g : rep.grad) CHECK(g == 0.0);
}

TEST_CASE("zero-parameter denoiser scores log d per masked position") {
    ToyDataset data = weighted_pair();
    NoiseSchedule sched;
    LinearSoftmaxDenoiser den(data.spec, data.L, 0);
    CorruptedBatch batch;
    batch.push_back({seq({Token::valid(1), Token::valid(1)}),
                     seq({Token::mask(2), Token::mask(1)}), 0.5, std::nullopt});
    LossReport rep = loss_and_grad_on_batch(den, batch, LossKind::ddm_linear, sched);
    CHECK(rep.masked_positions == 2);
    CHECK(std::abs(rep.loss - 2.0 * 2.0 * std::log(2.0)) < 1e-12);
}

TEST_CASE("empty batches are rejected") {
    NoiseSchedule sched;
    VocabSpec spec{2, 2};
    LinearSoftmaxDenoiser den(spec, 2, 0);
    CorruptedBatch empty;
    CHECK_THROWS_AS(loss_value_on_batch(den, empty, LossKind::mvtm, sched),
                    std::invalid_argument);
    CHECK_THROWS_AS(loss_and_grad_on_batch(den, empty, LossKind::mvtm, sched),
                    std::invalid_argument);
}

TEST_CASE("linear and general objectives agree bitwise on the linear schedule") {
    ToyDataset data = labeled_pair();
    NoiseSchedule sched;
    LinearSoftmaxDenoiser den(data.spec, data.L, 2);
    Rng pr(21);
    for (double &x : den.params()) x = pr.uniform() - 0.5;

    Rng a(1234), b(1234);
    LossReport ra = ddm_linear_loss(den, data.examples, sched, 1e-3, 0.2, a);
    LossReport rb = ddm_general_loss(den, data.examples, sched, 1e-3, 0.2, b);
    CHECK(ra.loss == rb.loss);
    REQUIRE(ra.grad.size() == rb.grad.size());
    for (size_t k = 0; k < ra.grad.size(); ++k) CHECK(ra.grad[k] == rb.grad[k]);

    // the flat objective scores the same draws differently
    Rng c(1234);
    LossReport rc = mvtm_loss(den, data.examples, sched, 1e-3, 0.2, c);
    CHECK(rc.loss != ra.loss);
}

TEST_CASE("analytic gradient matches central differences") {
    ToyDataset data = labeled_pair();
    NoiseSchedule sched;
    LinearSoftmaxDenoiser den(data.spec, data.L, 2, true);
    Rng pr(33);
    for (double &x : den.params()) x = 0.4 * (pr.uniform() - 0.5);

    Rng br(101);
    auto raw = select_batch(data, 8, br);
    CorruptedBatch batch = corrupt_examples(raw, 0.05, 0.3, sched, data.spec, br);

    for (LossKind kind : {LossKind::ddm_linear, LossKind::mvtm}) {
        Rng gr(7);
        double worst = grad_check(den, batch, kind, sched, gr, 300, 1e-5);
        INFO("kind " << int(kind) << " worst rel err " << worst);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("train runs, logs and improves on a toy dataset") {
    ToyDataset data = labeled_pair();
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.batch = 8;
    cfg.lr = 5e-2;
    cfg.log_every = 10;
    cfg.seed = 5;
    TrainResult res = train(data, cfg);

    REQUIRE(res.metrics.size() == 6);
    CHECK(res.metrics.front().step == 10);
    CHECK(res.metrics.back().step == 60);
    for (size_t i = 1; i < res.metrics.size(); ++i)
        CHECK(res.metrics[i].wall_ms >= res.metrics[i - 1].wall_ms);

    CHECK(res.best_loss <= res.final_loss);
    CHECK(res.best_step >= 1);
    CHECK(res.best_step <= 60);
    // the toy problem is easy enough that sixty steps must cut the loss
    CHECK(res.best_loss < res.metrics.front().loss);

    // the trained model should strongly favor the right code at t near 0
    NoiseSchedule sched;
    DenoiserOutput p =
        res.final_denoiser.predict(seq({Token::valid(1), Token::mask(1)}), 0.2, std::nullopt);
    CHECK(p.at(1, 1) > 0.5);
}

TEST_CASE("train is reproducible from the config seed") {
    ToyDataset data = labeled_pair();
    TrainConfig cfg;
    cfg.steps = 20;
    cfg.batch = 4;
    cfg.seed = 99;
    TrainResult a = train(data, cfg);
    TrainResult b = train(data, cfg);
    CHECK(a.final_loss == b.final_loss);
    REQUIRE(a.final_denoiser.params().size() == b.final_denoiser.params().size());
    for (size_t k = 0; k < a.final_denoiser.params().size(); ++k)
        CHECK(a.final_denoiser.params()[k] == b.final_denoiser.params()[k]);

    TrainConfig sg = cfg;
    sg.optimizer = TrainConfig::Opt::sgd;
    TrainResult c = train(data, sg);
    CHECK(c.final_loss != a.final_loss);
}

TEST_CASE("train insists on dense class labels") {
    VocabSpec spec{2, 2};
    std::vector<LabeledExample> ex;
    ex.push_back({seq({Token::valid(1), Token::valid(1)}), 2, 1.0});
    ToyDataset data = make_dataset(spec, 2, ex);
    TrainConfig cfg;
    cfg.steps = 1;
    CHECK_THROWS_AS(train(data, cfg), std::invalid_argument);
}
