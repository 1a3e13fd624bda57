#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "maskdiff/denoiser.hpp"

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

std::string temp_path(const char *stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("softmax_row normalizes and is shift invariant") {
    std::vector<double> a{1.0, 2.0, 3.0};
    std::vector<double> b{101.0, 102.0, 103.0};
    softmax_row(a);
    softmax_row(b);
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] == b[i]);
        sum += a[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-15);
    CHECK(a[0] < a[1]);
    CHECK(a[1] < a[2]);
}

TEST_CASE("log_rows floors zeros instead of producing -inf") {
    DenoiserOutput probs(1, 2);
    probs.at(0, 0) = 1.0;
    probs.at(0, 1) = 0.0;
    DenoiserOutput logs = log_rows(probs);
    CHECK(logs.at(0, 0) == 0.0);
    CHECK(std::isfinite(logs.at(0, 1)));
}

TEST_CASE("exact posterior denoiser returns the true clean marginals") {
    ToyDataset data = weighted_pair();
    NoiseSchedule sched;
    ExactPosteriorDenoiser den(data, sched);
    CHECK(den.seq_len() == 2);
    CHECK(den.vocab() == data.spec);

    // posterior over {AA:2/3, AB:1/3} given (A, M)
    DenoiserOutput out = den.predict(seq({Token::valid(1), Token::mask(1)}), 0.5, std::nullopt);
    CHECK(std::abs(out.at(0, 0) - 1.0) < 1e-15);
    CHECK(std::abs(out.at(0, 1) - 0.0) < 1e-15);
    CHECK(std::abs(out.at(1, 0) - 2.0 / 3.0) < 1e-15);
    CHECK(std::abs(out.at(1, 1) - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("exact posterior denoiser is one-hot on a clean supported sequence") {
    ToyDataset data = weighted_pair();
    NoiseSchedule sched;
    ExactPosteriorDenoiser den(data, sched);
    DenoiserOutput out = den.predict(seq({Token::valid(1), Token::valid(2)}), 0.3, std::nullopt);
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(0, 1) == 0.0);
    CHECK(out.at(1, 0) == 0.0);
    CHECK(out.at(1, 1) == 1.0);
}

TEST_CASE("exact posterior denoiser propagates no_support_error") {
    ToyDataset data = weighted_pair();
    NoiseSchedule sched;
    ExactPosteriorDenoiser den(data, sched);
    CHECK_THROWS_AS(den.predict(seq({Token::valid(2), Token::mask(1)}), 0.5, std::nullopt),
                    no_support_error);
}

TEST_CASE("exact posterior denoiser logits are logs of the marginals") {
    ToyDataset data = weighted_pair();
    NoiseSchedule sched;
    ExactPosteriorDenoiser den(data, sched);
    Sequence x_t = seq({Token::mask(1), Token::mask(2)});
    DenoiserOutput p = den.predict(x_t, 0.5, std::nullopt);
    DenoiserOutput lg = den.logits(x_t, 0.5, std::nullopt);
    for (int i = 0; i < 2; ++i)
        for (int v = 0; v < 2; ++v)
            CHECK(lg.at(i, v) == std::log(std::max(p.at(i, v), 1e-300)));
}

TEST_CASE("linear denoiser with zero parameters predicts uniform") {
    VocabSpec spec{3, 2};
    LinearSoftmaxDenoiser den(spec, 2, 2);
    DenoiserOutput out = den.predict(seq({Token::mask(1), Token::valid(2)}), 0.5, 1);
    for (int i = 0; i < 2; ++i)
        for (int v = 0; v < 3; ++v)
            CHECK(std::abs(out.at(i, v) - 1.0 / 3.0) < 1e-15);
}

TEST_CASE("linear denoiser parameter blocks address distinct entries") {
    VocabSpec spec{2, 2};
    LinearSoftmaxDenoiser den(spec, 2, 1, true);
    // W: L*L*(d+m)*d, b: L*d, C: (num_classes+1)*L*d, T: L*d
    size_t expected = size_t(2 * 2 * 4 * 2) + 2 * 2 + 2 * 2 * 2 + 2 * 2;
    CHECK(den.param_count() == expected);
    CHECK(den.params().size() == expected);

    // each block ends exactly where the next begins
    CHECK(den.b_off(0, 0) == size_t(2 * 2 * 4 * 2));
    CHECK(den.c_off(0, 0, 0) == den.b_off(1, 1) + 1);
    CHECK(den.t_off(0, 0) == den.c_off(1, 1, 1) + 1);
    CHECK(den.t_off(1, 1) + 1 == expected);
}

TEST_CASE("linear denoiser logit assembles bias, class, context and time terms") {
    VocabSpec spec{2, 1};
    LinearSoftmaxDenoiser den(spec, 2, 2, true);
    auto &p = den.params();
    Sequence x_t = seq({Token::valid(2), Token::mask(1)});
    // x_t flat codes: position 0 -> 1, position 1 -> 2
    p[den.b_off(0, 0)] = 0.25;
    p[den.c_off(den.class_row(1), 0, 0)] = 0.5;
    p[den.w_off(0, 0, 1, 0)] = 1.0;
    p[den.w_off(0, 1, 2, 0)] = 2.0;
    p[den.t_off(0, 0)] = 4.0;
    DenoiserOutput z = den.predict_logits(x_t, 0.5, 1);
    CHECK(z.at(0, 0) == 0.25 + 0.5 + 1.0 + 2.0 + 4.0 * 0.5);
    CHECK(z.at(0, 1) == 0.0);

    // null label reads class row 0
    p[den.c_off(0, 0, 0)] = -3.0;
    DenoiserOutput z0 = den.predict_logits(x_t, 0.0, std::nullopt);
    CHECK(z0.at(0, 0) == 0.25 + (-3.0) + 1.0 + 2.0);
}

TEST_CASE("linear denoiser validates label, length and time") {
    VocabSpec spec{2, 2};
    LinearSoftmaxDenoiser den(spec, 2, 2);
    Sequence ok = seq({Token::mask(1), Token::mask(1)});
    CHECK_THROWS_AS(den.predict(ok, 0.5, 5), std::invalid_argument);
    CHECK_THROWS_AS(den.predict(ok, 0.5, -1), std::invalid_argument);
    CHECK_THROWS_AS(den.predict(seq({Token::mask(1)}), 0.5, std::nullopt),
                    std::invalid_argument);
    CHECK_THROWS_AS(den.predict(ok, 1.5, std::nullopt), std::domain_error);
    CHECK_NOTHROW(den.predict(ok, 0.5, 0));
    CHECK_NOTHROW(den.predict(ok, 0.5, 1));
}

TEST_CASE("linear denoiser snapshot round-trips bitwise") {
    VocabSpec spec{3, 2};
    LinearSoftmaxDenoiser den(spec, 2, 2, true);
    Rng rng(42);
    for (double &x : den.params()) x = rng.uniform() * 2.0 - 1.0;

    std::string path = temp_path("maskdiff_denoiser_roundtrip.bin");
    den.save(path);
    LinearSoftmaxDenoiser back = LinearSoftmaxDenoiser::load(path);
    std::remove(path.c_str());

    CHECK(back.vocab() == spec);
    CHECK(back.seq_len() == 2);
    CHECK(back.num_classes() == 2);
    CHECK(back.has_time_channel());
    REQUIRE(back.params().size() == den.params().size());
    for (size_t i = 0; i < den.params().size(); ++i)
        CHECK(back.params()[i] == den.params()[i]);
}

TEST_CASE("linear denoiser load rejects foreign and truncated files") {
    std::string path = temp_path("maskdiff_denoiser_bad.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out << "not a snapshot at all";
    }
    CHECK_THROWS_AS(LinearSoftmaxDenoiser::load(path), std::runtime_error);

    // valid header, missing parameter payload
    {
        VocabSpec spec{2, 2};
        LinearSoftmaxDenoiser den(spec, 2, 1);
        den.save(path);
        std::filesystem::resize_file(path, 8 + 24 + 8 + 16);
    }
    CHECK_THROWS_AS(LinearSoftmaxDenoiser::load(path), std::runtime_error);
    std::remove(path.c_str());

    CHECK_THROWS_AS(LinearSoftmaxDenoiser::load(temp_path("maskdiff_no_such_file.bin")),
                    std::runtime_error);
}
