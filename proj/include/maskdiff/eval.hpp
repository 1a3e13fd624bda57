// Empirical distributions over sampled sequences, distance/diversity
// metrics, and the benchmark / capacity-sweep drivers built on them.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskdiff/dataset.hpp"
#include "maskdiff/samplers.hpp"
#include "maskdiff/training.hpp"

namespace maskdiff {

// Counts of flat-index tuples.  Keys may carry an optional leading label
// component; the distribution does not care, it only counts tuples.
class EmpiricalDistribution {
public:
    void add(const std::vector<int>& key) {
        ++counts_[key];
        ++total_;
    }

    void add(const Sequence& seq, const VocabSpec& spec) {
        std::vector<int> key(seq.size());
        for (std::size_t i = 0; i < seq.size(); ++i) key[i] = flat_index(seq[i], spec);
        add(key);
    }

    // Label-prefixed key: the label occupies slot 0, tokens follow.
    void add(int label, const Sequence& seq, const VocabSpec& spec) {
        std::vector<int> key(seq.size() + 1);
        key[0] = label;
        for (std::size_t i = 0; i < seq.size(); ++i) key[i + 1] = flat_index(seq[i], spec);
        add(key);
    }

    long long total() const { return total_; }
    std::size_t distinct() const { return counts_.size(); }

    std::map<std::vector<int>, double> probabilities() const {
        std::map<std::vector<int>, double> out;
        if (total_ == 0) return out;
        for (const auto& [k, c] : counts_) out[k] = double(c) / double(total_);
        return out;
    }

    // Shannon entropy of the empirical distribution, in nats.
    double entropy() const {
        double h = 0.0;
        for (const auto& [k, c] : counts_) {
            (void)k;
            double p = double(c) / double(total_);
            h -= p * std::log(p);
        }
        return h;
    }

private:
    std::map<std::vector<int>, long long> counts_;
    long long total_ = 0;
};

// Total variation distance between two distributions given as key->prob
// maps.  The sum runs over the union of supports.
inline double tv_distance(const std::map<std::vector<int>, double>& a,
                          const std::map<std::vector<int>, double>& b) {
    double acc = 0.0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() || ib != b.end()) {
        if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
            acc += std::abs(ia->second);
            ++ia;
        } else if (ia == a.end() || ib->first < ia->first) {
            acc += std::abs(ib->second);
            ++ib;
        } else {
            acc += std::abs(ia->second - ib->second);
            ++ia;
            ++ib;
        }
    }
    return 0.5 * acc;
}

inline double tv_distance(const EmpiricalDistribution& emp,
                          const std::map<std::vector<int>, double>& exact) {
    return tv_distance(emp.probabilities(), exact);
}

struct DiversityReport {
    double entropy = 0.0;
    std::size_t distinct = 0;
    long long total = 0;
};

inline DiversityReport diversity(const EmpiricalDistribution& emp) {
    return DiversityReport{emp.entropy(), emp.distinct(), emp.total()};
}

inline const char* sampler_name(SamplerKind k) {
    switch (k) {
        case SamplerKind::rehash: return "rehash";
        case SamplerKind::mvtm: return "mvtm";
        case SamplerKind::dfm: return "dfm";
        case SamplerKind::hybrid: return "hybrid";
    }
    throw std::logic_error("unknown sampler kind");
}

struct BenchRow {
    std::string sampler;
    int K = 0;
    std::uint64_t seed = 0;
    double tv = 0.0;
    double entropy = 0.0;
    std::size_t distinct = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;

    // Per (sampler, K) aggregate across seeds.
    struct Aggregate {
        std::string sampler;
        int K = 0;
        double tv_mean = 0.0, tv_std = 0.0;
        double entropy_mean = 0.0, entropy_std = 0.0;
        double distinct_mean = 0.0, distinct_std = 0.0;
    };

    std::vector<Aggregate> aggregates() const {
        std::vector<Aggregate> out;
        for (const auto& r : rows) {
            auto it = std::find_if(out.begin(), out.end(), [&](const Aggregate& a) {
                return a.sampler == r.sampler && a.K == r.K;
            });
            if (it == out.end()) {
                out.push_back(Aggregate{r.sampler, r.K, 0, 0, 0, 0, 0, 0});
            }
        }
        for (auto& a : out) {
            std::vector<double> tvs, ents, dis;
            for (const auto& r : rows) {
                if (r.sampler != a.sampler || r.K != a.K) continue;
                tvs.push_back(r.tv);
                ents.push_back(r.entropy);
                dis.push_back(double(r.distinct));
            }
            auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
                mean = 0.0;
                for (double x : v) mean += x;
                mean /= double(v.size());
                double s2 = 0.0;
                for (double x : v) s2 += (x - mean) * (x - mean);
                // Population standard deviation; a single seed reports 0.
                sd = std::sqrt(s2 / double(v.size()));
            };
            mean_std(tvs, a.tv_mean, a.tv_std);
            mean_std(ents, a.entropy_mean, a.entropy_std);
            mean_std(dis, a.distinct_mean, a.distinct_std);
        }
        return out;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os.precision(10);
        os << "sampler,K,seed,tv,entropy,distinct\n";
        for (const auto& r : rows) {
            os << r.sampler << ',' << r.K << ',' << r.seed << ',' << r.tv << ','
               << r.entropy << ',' << r.distinct << '\n';
        }
        for (const auto& a : aggregates()) {
            os << a.sampler << ',' << a.K << ",mean," << a.tv_mean << ','
               << a.entropy_mean << ',' << a.distinct_mean << '\n';
            os << a.sampler << ',' << a.K << ",std," << a.tv_std << ','
               << a.entropy_std << ',' << a.distinct_std << '\n';
        }
        return os.str();
    }
};

struct BenchConfig {
    std::vector<SamplerKind> samplers{SamplerKind::rehash};
    std::vector<int> step_counts{8};
    std::vector<std::uint64_t> seeds{1};
    long long samples_per_cell = 100000;
    TimelineKind timeline = TimelineKind::linear;
    CfgConfig cfg{};   // applied only when sampling conditionally
    GumbelConfig gumbel{};
    std::set<int> dfm_steps{};  // hybrid only; empty -> default_hybrid_steps(K)
    bool conditional = true;       // draw labels by class mass, guide on them
};

// Exact target for the benchmark: the joint over (label, tokens) when the
// run is conditional, or the marginal over tokens otherwise.
inline std::map<std::vector<int>, double> bench_target(const ToyDataset& data,
                                                       bool conditional) {
    std::map<std::vector<int>, double> out;
    if (!conditional) return distribution(data, std::nullopt);
    for (const auto& ex : data.examples) {
        std::vector<int> key(ex.x0.size() + 1);
        key[0] = ex.label.value_or(-1);
        for (std::size_t i = 0; i < ex.x0.size(); ++i)
            key[i + 1] = flat_index(ex.x0[i], data.spec);
        out[key] += ex.weight;
    }
    return out;
}

inline double class_mass(const ToyDataset& data, int label) {
    double w = 0.0;
    for (const auto& ex : data.examples)
        if (ex.label && *ex.label == label) w += ex.weight;
    return w;
}

// One benchmark cell: fixed sampler, step count and seed.  Each draw gets
// its own derived stream so cells are reproducible independently of order.
template <typename Denoiser>
BenchRow bench_cell(const Denoiser& den, const ToyDataset& data, SamplerKind kind,
                    int K, std::uint64_t seed, const BenchConfig& bc,
                    const NoiseSchedule& sched) {
    SamplerConfig sc;
    sc.kind = kind;
    sc.K = K;
    sc.timeline = bc.timeline;
    sc.cfg = bc.cfg;
    sc.gumbel = bc.gumbel;
    if (kind == SamplerKind::hybrid)
        sc.dfm_steps = bc.dfm_steps.empty() ? default_hybrid_steps(K) : bc.dfm_steps;

    // Class masses, for label draws in conditional mode.
    std::vector<double> masses;
    for (int c : data.classes) masses.push_back(class_mass(data, c));

    EmpiricalDistribution emp;
    for (long long i = 0; i < bc.samples_per_cell; ++i) {
        Rng rng = Rng::stream(seed, std::uint64_t(i));
        Label label;
        if (bc.conditional && !data.classes.empty())
            label = data.classes[rng.categorical(masses)];
        SampleRun run = sample(den, label, sc, sched, rng, std::uint64_t(i));
        if (bc.conditional && label)
            emp.add(*label, run.final, data.spec);
        else
            emp.add(run.final, data.spec);
    }

    const auto target = bench_target(data, bc.conditional && !data.classes.empty());
    BenchRow row;
    row.sampler = sampler_name(kind);
    row.K = K;
    row.seed = seed;
    row.tv = tv_distance(emp, target);
    row.entropy = emp.entropy();
    row.distinct = emp.distinct();
    return row;
}

template <typename Denoiser>
BenchReport sampler_bench(const Denoiser& den, const ToyDataset& data,
                          const BenchConfig& bc, const NoiseSchedule& sched) {
    BenchReport report;
    for (SamplerKind kind : bc.samplers)
        for (int K : bc.step_counts)
            for (std::uint64_t seed : bc.seeds)
                report.rows.push_back(bench_cell(den, data, kind, K, seed, bc, sched));
    return report;
}

struct SweepRow {
    int m = 0;
    double tv = 0.0;
    double entropy = 0.0;
    std::size_t distinct = 0;
    double final_loss = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;

    std::string to_csv() const {
        std::ostringstream os;
        os.precision(10);
        os << "m,tv,entropy,distinct,final_loss\n";
        for (const auto& r : rows)
            os << r.m << ',' << r.tv << ',' << r.entropy << ',' << r.distinct << ','
               << r.final_loss << '\n';
        return os.str();
    }
};

struct SweepConfig {
    std::vector<int> mask_counts{1, 2, 4};
    TrainConfig train{};
    SamplerKind kind = SamplerKind::rehash;
    int K = 8;
    long long samples = 10000;
    std::uint64_t sample_seed = 7;
    TimelineKind timeline = TimelineKind::linear;
    CfgConfig cfg{};
    bool conditional = true;
};

// Retrains the denoiser from scratch for each mask-slot count; everything
// else about the protocol is held fixed so rows are comparable.
inline SweepReport capacity_sweep(const ToyDataset& base, const SweepConfig& sw,
                                  const NoiseSchedule& sched) {
    SweepReport report;
    for (int m : sw.mask_counts) {
        ToyDataset data = with_mask_count(base, m);
        TrainResult tr = train(data, sw.train);

        BenchConfig bc;
        bc.samplers = {sw.kind};
        bc.step_counts = {sw.K};
        bc.seeds = {sw.sample_seed};
        bc.samples_per_cell = sw.samples;
        bc.timeline = sw.timeline;
        bc.cfg = sw.cfg;
        bc.conditional = sw.conditional;
        BenchRow row = bench_cell(tr.final_denoiser, data, sw.kind, sw.K,
                                  sw.sample_seed, bc, sched);

        report.rows.push_back(SweepRow{m, row.tv, row.entropy, row.distinct,
                                       tr.final_loss});
    }
    return report;
}

}  // namespace maskdiff
