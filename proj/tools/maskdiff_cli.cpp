// Command-line front end. Subcommands cover the whole pipeline: synthesize
// a dataset, train the linear denoiser, sample with any of the reverse
// samplers, evaluate sample files, run the sampler benchmark and the
// capacity sweep, and check kernel algebra. Every run that writes files
// also writes a manifest recording the argv, seed, effective config and
// content digests, so a run can be replayed and byte-compared.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "maskdiff/maskdiff.hpp"

namespace {

using namespace maskdiff;

std::vector<std::string> capture_argv(int argc, char **argv) {
    return std::vector<std::string>(argv, argv + argc);
}

TimelineKind timeline_from_name(const std::string &name) {
    if (name == "linear") return TimelineKind::linear;
    if (name == "arccos") return TimelineKind::arccos;
    if (name == "square") return TimelineKind::square;
    if (name == "cosine") return TimelineKind::cosine;
    throw std::invalid_argument("unknown timeline: " + name);
}

SamplerKind sampler_from_name(const std::string &name) {
    if (name == "rehash") return SamplerKind::rehash;
    if (name == "mvtm") return SamplerKind::mvtm;
    if (name == "dfm") return SamplerKind::dfm;
    if (name == "hybrid") return SamplerKind::hybrid;
    throw std::invalid_argument("unknown sampler: " + name);
}

LossKind loss_from_name(const std::string &name) {
    if (name == "ddm-linear") return LossKind::ddm_linear;
    if (name == "ddm-general") return LossKind::ddm_general;
    if (name == "mvtm") return LossKind::mvtm;
    throw std::invalid_argument("unknown loss: " + name);
}

// "0.7,0.3;0.4,0.6" -> row-major transition rows
std::vector<std::vector<double>> parse_rows(const std::string &text) {
    std::vector<std::vector<double>> rows;
    std::stringstream ss(text);
    std::string row;
    while (std::getline(ss, row, ';')) {
        std::vector<double> r;
        std::stringstream rs(row);
        std::string cell;
        while (std::getline(rs, cell, ',')) r.push_back(std::stod(cell));
        if (!r.empty()) rows.push_back(std::move(r));
    }
    return rows;
}

std::string format_samples_csv(const std::vector<std::pair<Label, Sequence>> &runs,
                               const VocabSpec &spec) {
    std::ostringstream os;
    os << "run,label,tokens\n";
    for (std::size_t r = 0; r < runs.size(); ++r) {
        os << r << ',';
        if (runs[r].first)
            os << *runs[r].first;
        else
            os << '-';
        os << ',';
        const Sequence &s = runs[r].second;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << ' ';
            os << flat_index(s[i], spec);
        }
        os << '\n';
    }
    return os.str();
}

std::vector<std::pair<Label, std::vector<int>>> parse_samples_csv(const std::string &text) {
    std::vector<std::pair<Label, std::vector<int>>> out;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (lineno == 1) {
            if (line != "run,label,tokens")
                throw parse_error("samples file: unexpected header '" + line + "'");
            continue;
        }
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string run_s, label_s, tokens_s;
        if (!std::getline(ls, run_s, ',') || !std::getline(ls, label_s, ',') ||
            !std::getline(ls, tokens_s))
            throw parse_error("samples file: malformed line " + std::to_string(lineno));
        Label label;
        if (label_s != "-") label = std::stoi(label_s);
        std::vector<int> toks;
        std::stringstream ts(tokens_s);
        int v;
        while (ts >> v) toks.push_back(v);
        if (toks.empty())
            throw parse_error("samples file: no tokens on line " + std::to_string(lineno));
        out.emplace_back(label, std::move(toks));
    }
    if (out.empty()) throw parse_error("samples file: no sample rows");
    return out;
}

Sequence parse_inpaint_file(const std::string &path, const VocabSpec &spec) {
    std::string text = read_file(path);
    std::stringstream ss(text);
    Sequence seq;
    int v;
    while (ss >> v) seq.push_back(unflat_index(v, spec));
    if (seq.empty()) throw parse_error("inpaint file is empty: " + path);
    return seq;
}

std::string format_double(double x) {
    std::ostringstream os;
    os.precision(10);
    os << x;
    return os.str();
}

// Options shared by the sampling-side subcommands.
struct SamplingFlags {
    std::string sampler = "rehash";
    int steps = 8;
    std::string timeline = "linear";
    double cfg_w = 1.0;
    double cfg_lo = 1.0, cfg_hi = 1.0;
    bool cfg_prob_space = false;
    double g0 = 1.0;
    std::vector<int> dfm_steps;

    CLI::Option *lo_opt = nullptr;
    CLI::Option *hi_opt = nullptr;

    void attach(CLI::App *cmd) {
        cmd->add_option("--sampler", sampler, "rehash|mvtm|dfm|hybrid")
            ->check(CLI::IsMember({"rehash", "mvtm", "dfm", "hybrid"}));
        cmd->add_option("--steps", steps, "reverse steps K")->check(CLI::PositiveNumber);
        cmd->add_option("--timeline", timeline, "linear|arccos|square|cosine")
            ->check(CLI::IsMember({"linear", "arccos", "square", "cosine"}));
        cmd->add_option("--cfg-w", cfg_w, "constant guidance weight");
        lo_opt = cmd->add_option("--cfg-lo", cfg_lo, "guidance weight at the first step");
        hi_opt = cmd->add_option("--cfg-hi", cfg_hi, "guidance weight at the last step");
        cmd->add_flag("--cfg-prob-space", cfg_prob_space,
                      "combine guidance in probability space instead of logit space");
        cmd->add_option("--g0", g0, "Gumbel intensity at t=1 (mvtm)");
        cmd->add_option("--dfm-steps", dfm_steps, "hybrid: 1-based step indices run as dfm")
            ->delimiter(',');
    }

    CfgConfig cfg() const {
        CfgConfig c;
        c.space = cfg_prob_space ? CfgConfig::Space::prob : CfgConfig::Space::logit;
        if ((lo_opt && lo_opt->count()) || (hi_opt && hi_opt->count())) {
            c.mode = CfgConfig::Mode::linear_increase;
            c.w_lo = cfg_lo;
            c.w_hi = cfg_hi;
        } else {
            c.mode = CfgConfig::Mode::constant;
            c.w = cfg_w;
        }
        return c;
    }

    SamplerConfig sampler_config() const {
        SamplerConfig sc;
        sc.kind = sampler_from_name(sampler);
        sc.K = steps;
        sc.timeline = timeline_from_name(timeline);
        sc.cfg = cfg();
        sc.gumbel.g0 = g0;
        if (sc.kind == SamplerKind::hybrid) {
            if (dfm_steps.empty())
                sc.dfm_steps = default_hybrid_steps(steps);
            else
                sc.dfm_steps = std::set<int>(dfm_steps.begin(), dfm_steps.end());
        }
        return sc;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["sampler"] = sampler;
        j["steps"] = steps;
        j["timeline"] = timeline;
        j["cfg_w"] = cfg_w;
        j["cfg_lo"] = cfg_lo;
        j["cfg_hi"] = cfg_hi;
        j["cfg_prob_space"] = cfg_prob_space;
        j["g0"] = g0;
        j["dfm_steps"] = dfm_steps;
        return j;
    }
};

struct TrainFlags {
    std::string loss = "ddm-linear";
    int steps = 3000;
    int batch = 32;
    double lr = 1e-2;
    std::string optimizer = "adam";
    double t_min = 1e-3;
    double label_drop = 0.1;
    int log_every = 100;
    bool time_channel = false;

    void attach(CLI::App *cmd) {
        cmd->add_option("--loss", loss, "ddm-linear|ddm-general|mvtm")
            ->check(CLI::IsMember({"ddm-linear", "ddm-general", "mvtm"}));
        cmd->add_option("--train-steps", steps, "optimization steps")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--optimizer", optimizer, "adam|sgd")
            ->check(CLI::IsMember({"adam", "sgd"}));
        cmd->add_option("--t-min", t_min, "lower cutoff for sampled t");
        cmd->add_option("--label-drop", label_drop, "null-label probability");
        cmd->add_option("--log-every", log_every, "metrics row interval")
            ->check(CLI::PositiveNumber);
        cmd->add_flag("--time-channel", time_channel, "give the denoiser a time input");
    }

    TrainConfig config(std::uint64_t seed) const {
        TrainConfig cfg;
        cfg.loss = loss_from_name(loss);
        cfg.steps = steps;
        cfg.batch = batch;
        cfg.lr = lr;
        cfg.optimizer = optimizer == "sgd" ? TrainConfig::Opt::sgd : TrainConfig::Opt::adam;
        cfg.t_min = t_min;
        cfg.label_drop = label_drop;
        cfg.log_every = log_every;
        cfg.seed = seed;
        cfg.time_channel = time_channel;
        return cfg;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["loss"] = loss;
        j["train_steps"] = steps;
        j["batch"] = batch;
        j["lr"] = lr;
        j["optimizer"] = optimizer;
        j["t_min"] = t_min;
        j["label_drop"] = label_drop;
        j["log_every"] = log_every;
        j["time_channel"] = time_channel;
        return j;
    }
};

std::string metrics_to_csv(const std::vector<MetricsRow> &rows) {
    std::ostringstream os;
    os.precision(10);
    os << "step,loss,wall_ms\n";
    for (const auto &r : rows) os << r.step << ',' << r.loss << ',' << r.wall_ms << '\n';
    return os.str();
}

// ---- gen-data ----

struct GenDataArgs {
    std::string kind;
    int side = 2;
    int d = 2;
    int m = 4;
    int classes = 2;
    int L = 2;
    std::string rows;
    std::uint64_t seed = 1;
    std::string out;
    std::string manifest;
};

int run_gen_data(const GenDataArgs &a, const std::vector<std::string> &argv) {
    Rng rng = Rng::stream(a.seed, 0);
    ToyDataset data = [&] {
        if (a.kind == "grid") return generate_grid_patterns(a.side, a.d, a.m, a.classes, rng);
        std::vector<std::vector<double>> rows;
        if (a.rows.empty())
            rows.assign(std::size_t(a.d), std::vector<double>(std::size_t(a.d), 1.0 / a.d));
        else
            rows = parse_rows(a.rows);
        return generate_markov(a.L, a.d, a.m, rows, rng);
    }();
    save(data, a.out);

    RunManifest man;
    man.command = argv;
    man.master_seed = a.seed;
    man.config = {{"subcommand", "gen-data"}, {"kind", a.kind},   {"side", a.side},
                  {"d", a.d},                {"m", a.m},          {"classes", a.classes},
                  {"L", a.L},                {"rows", a.rows},    {"seed", a.seed},
                  {"out", a.out}};
    man.add_output(a.out);
    save_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, man);

    std::cout << "wrote " << a.out << ": d=" << data.spec.d << " m=" << data.spec.m
              << " L=" << data.L << " examples=" << data.examples.size()
              << " classes=" << data.classes.size() << (data.exact ? "" : " (sampled)")
              << "\n";
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string dataset;
    std::string out;
    std::string metrics;
    std::string manifest;
    std::uint64_t seed = 1;
    bool save_best = false;
    TrainFlags flags;
};

int run_train(const TrainArgs &a, const std::vector<std::string> &argv) {
    ToyDataset data = load(a.dataset);
    TrainResult tr = train(data, a.flags.config(a.seed));
    const LinearSoftmaxDenoiser &snapshot = a.save_best ? tr.best_denoiser : tr.final_denoiser;
    snapshot.save(a.out);
    std::string metrics_path = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
    write_file(metrics_path, metrics_to_csv(tr.metrics));

    RunManifest man;
    man.command = argv;
    man.master_seed = a.seed;
    man.config = a.flags.to_json();
    man.config["subcommand"] = "train";
    man.config["dataset"] = a.dataset;
    man.config["out"] = a.out;
    man.config["seed"] = a.seed;
    man.config["save_best"] = a.save_best;
    man.add_input(a.dataset);
    man.add_output(a.out);
    // The metrics file carries wall-clock times, which do not replay
    // byte-identically, so it stays out of the manifest's output list.
    save_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, man);

    std::cout << "trained " << a.flags.loss << " for " << a.flags.steps << " steps: final loss "
              << format_double(tr.final_loss) << ", best " << format_double(tr.best_loss)
              << " at step " << tr.best_step << "\n";
    return 0;
}

// ---- sample ----

struct SampleArgs {
    std::string dataset;
    std::string denoiser = "exact";
    std::string model;
    int label = -1;
    long long num_samples = 16;
    std::uint64_t seed = 1;
    std::string inpaint;
    std::string out;
    std::string image;
    std::string manifest;
    SamplingFlags flags;
};

template <class D>
std::vector<std::pair<Label, Sequence>> drive_samples(const D &den, const SampleArgs &a,
                                                      const SamplerConfig &sc,
                                                      const NoiseSchedule &sched) {
    Label label;
    if (a.label >= 0) label = a.label;
    std::optional<Sequence> partial;
    if (!a.inpaint.empty()) {
        partial = parse_inpaint_file(a.inpaint, den.vocab());
        if (int(partial->size()) != den.seq_len())
            throw std::invalid_argument("inpaint sequence length does not match the denoiser");
    }
    std::vector<std::pair<Label, Sequence>> runs;
    runs.reserve(std::size_t(a.num_samples));
    for (long long i = 0; i < a.num_samples; ++i) {
        Rng rng = Rng::stream(a.seed, std::uint64_t(i));
        SampleRun run = partial
                            ? sample_inpaint(*partial, den, label, sc, sched, rng, std::uint64_t(i))
                            : sample(den, label, sc, sched, rng, std::uint64_t(i));
        runs.emplace_back(label, std::move(run.final));
    }
    return runs;
}

int run_sample(const SampleArgs &a, const std::vector<std::string> &argv) {
    NoiseSchedule sched;
    SamplerConfig sc = a.flags.sampler_config();

    std::vector<std::pair<Label, Sequence>> runs;
    VocabSpec spec(1, 1);
    int L = 0;
    RunManifest man;
    if (a.denoiser == "exact") {
        if (a.dataset.empty())
            throw std::invalid_argument("--denoiser exact requires --dataset");
        ToyDataset data = load(a.dataset);
        man.add_input(a.dataset);
        ExactPosteriorDenoiser den(data, sched);
        runs = drive_samples(den, a, sc, sched);
        spec = data.spec;
        L = data.L;
    } else {
        if (a.model.empty()) throw std::invalid_argument("--denoiser linear requires --model");
        LinearSoftmaxDenoiser den = LinearSoftmaxDenoiser::load(a.model);
        man.add_input(a.model);
        if (!a.inpaint.empty()) man.add_input(a.inpaint);
        runs = drive_samples(den, a, sc, sched);
        spec = den.vocab();
        L = den.seq_len();
    }
    if (a.denoiser == "exact" && !a.inpaint.empty()) man.add_input(a.inpaint);

    write_file(a.out, format_samples_csv(runs, spec));
    if (!a.image.empty()) {
        int side = int(std::lround(std::sqrt(double(L))));
        if (side * side != L)
            throw std::invalid_argument("--image requires sequence length to be a perfect square");
        std::vector<Sequence> seqs;
        seqs.reserve(runs.size());
        for (auto &[lab, s] : runs) seqs.push_back(s);
        export_grid_pgm(a.image, seqs, side, spec);
    }

    man.command = argv;
    man.master_seed = a.seed;
    man.config = a.flags.to_json();
    man.config["subcommand"] = "sample";
    man.config["dataset"] = a.dataset;
    man.config["denoiser"] = a.denoiser;
    man.config["model"] = a.model;
    man.config["label"] = a.label;
    man.config["num_samples"] = a.num_samples;
    man.config["seed"] = a.seed;
    man.config["inpaint"] = a.inpaint;
    man.config["out"] = a.out;
    man.config["image"] = a.image;
    man.add_output(a.out);
    if (!a.image.empty()) man.add_output(a.image);
    save_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, man);

    std::cout << "wrote " << runs.size() << " samples to " << a.out << "\n";
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string dataset;
    std::string samples;
    std::string out;
    std::string manifest;
};

int run_eval(const EvalArgs &a, const std::vector<std::string> &argv) {
    ToyDataset data = load(a.dataset);
    auto rows = parse_samples_csv(read_file(a.samples));

    bool all_labeled = true;
    for (const auto &[label, toks] : rows)
        if (!label) all_labeled = false;

    EmpiricalDistribution emp;
    for (const auto &[label, toks] : rows) {
        for (int v : toks) (void)unflat_index(v, data.spec);  // range check
        if (int(toks.size()) != data.L)
            throw parse_error("samples file: token count does not match dataset L");
        if (all_labeled) {
            std::vector<int> key;
            key.push_back(*label);
            key.insert(key.end(), toks.begin(), toks.end());
            emp.add(key);
        } else {
            emp.add(toks);
        }
    }
    auto target = all_labeled ? bench_target(data, true) : distribution(data, std::nullopt);
    double tv = tv_distance(emp, target);
    DiversityReport div = diversity(emp);

    std::ostringstream os;
    os.precision(10);
    os << "tv,entropy,distinct,total\n"
       << tv << ',' << div.entropy << ',' << div.distinct << ',' << div.total << '\n';
    write_file(a.out, os.str());

    RunManifest man;
    man.command = argv;
    man.config = {{"subcommand", "eval"},
                  {"dataset", a.dataset},
                  {"samples", a.samples},
                  {"out", a.out}};
    man.add_input(a.dataset);
    man.add_input(a.samples);
    man.add_output(a.out);
    save_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, man);

    std::cout << "tv=" << format_double(tv) << " entropy=" << format_double(div.entropy)
              << " distinct=" << div.distinct << " over " << div.total << " samples\n";
    return 0;
}

// ---- bench ----

struct BenchArgs {
    std::string dataset;
    std::string denoiser = "exact";
    std::string model;
    std::vector<std::string> samplers{"rehash", "mvtm"};
    std::vector<int> step_counts{4, 8, 16};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    long long num_samples = 100000;
    std::vector<double> g0_list{1.0};
    int g0_family = 0;
    std::uint64_t g0_seed = 99;
    bool unconditional = false;
    std::string out;
    std::string manifest;
    SamplingFlags flags;  // timeline + cfg shared; sampler/steps/g0 ignored here
};

// g0 values for the swept-noise family: uniform on [0.5, 4.0].
std::vector<double> gumbel_family(int n, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, 0);
    std::vector<double> out;
    for (int i = 0; i < n; ++i) out.push_back(0.5 + 3.5 * rng.uniform());
    return out;
}

template <class D>
BenchReport run_bench_against(const D &den, const ToyDataset &data, const BenchArgs &a,
                              const NoiseSchedule &sched) {
    BenchConfig bc;
    bc.step_counts = a.step_counts;
    bc.seeds = a.seeds;
    bc.samples_per_cell = a.num_samples;
    bc.timeline = timeline_from_name(a.flags.timeline);
    bc.cfg = a.flags.cfg();
    bc.conditional = !a.unconditional;

    std::vector<double> g0s = a.g0_family > 0 ? gumbel_family(a.g0_family, a.g0_seed)
                                              : a.g0_list;
    BenchReport report;
    for (const std::string &name : a.samplers) {
        SamplerKind kind = sampler_from_name(name);
        if (kind == SamplerKind::mvtm && g0s.size() > 1) {
            for (double g0 : g0s) {
                bc.samplers = {kind};
                bc.gumbel.g0 = g0;
                BenchReport part = sampler_bench(den, data, bc, sched);
                for (auto &row : part.rows) {
                    std::ostringstream os;
                    os << "mvtm:g0=" << g0;
                    row.sampler = os.str();
                    report.rows.push_back(row);
                }
            }
        } else {
            bc.samplers = {kind};
            if (kind == SamplerKind::mvtm && !g0s.empty()) bc.gumbel.g0 = g0s.front();
            BenchReport part = sampler_bench(den, data, bc, sched);
            report.rows.insert(report.rows.end(), part.rows.begin(), part.rows.end());
        }
    }
    return report;
}

int run_bench(const BenchArgs &a, const std::vector<std::string> &argv) {
    NoiseSchedule sched;
    ToyDataset data = load(a.dataset);

    RunManifest man;
    man.add_input(a.dataset);
    BenchReport report;
    if (a.denoiser == "exact") {
        ExactPosteriorDenoiser den(data, sched);
        report = run_bench_against(den, data, a, sched);
    } else {
        if (a.model.empty()) throw std::invalid_argument("--denoiser linear requires --model");
        LinearSoftmaxDenoiser den = LinearSoftmaxDenoiser::load(a.model);
        man.add_input(a.model);
        report = run_bench_against(den, data, a, sched);
    }
    write_file(a.out, report.to_csv());

    man.command = argv;
    man.master_seed = a.seeds.empty() ? 0 : a.seeds.front();
    man.config = a.flags.to_json();
    man.config["subcommand"] = "bench";
    man.config["dataset"] = a.dataset;
    man.config["denoiser"] = a.denoiser;
    man.config["model"] = a.model;
    man.config["samplers"] = a.samplers;
    man.config["step_counts"] = a.step_counts;
    man.config["seeds"] = a.seeds;
    man.config["num_samples"] = a.num_samples;
    man.config["g0_list"] = a.g0_list;
    man.config["g0_family"] = a.g0_family;
    man.config["g0_seed"] = a.g0_seed;
    man.config["unconditional"] = a.unconditional;
    man.config["out"] = a.out;
    man.add_output(a.out);
    save_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, man);

    std::cout << "bench wrote " << report.rows.size() << " rows to " << a.out << "\n";
    for (const auto &agg : report.aggregates())
        std::cout << "  " << agg.sampler << " K=" << agg.K << ": tv " << format_double(agg.tv_mean)
                  << " +- " << format_double(agg.tv_std) << "\n";
    return 0;
}

// ---- sweep ----

struct SweepArgs {
    std::string dataset;
    std::vector<int> m_values{1, 2, 4, 8, 16};
    std::string sampler = "rehash";
    int K = 8;
    long long num_samples = 10000;
    std::uint64_t seed = 1;
    std::uint64_t sample_seed = 7;
    std::string out;
    std::string manifest;
    TrainFlags train_flags;
    std::string timeline = "linear";
};

int run_sweep(const SweepArgs &a, const std::vector<std::string> &argv) {
    NoiseSchedule sched;
    ToyDataset base = load(a.dataset);

    SweepConfig sw;
    sw.mask_counts = a.m_values;
    sw.train = a.train_flags.config(a.seed);
    sw.kind = sampler_from_name(a.sampler);
    sw.K = a.K;
    sw.samples = a.num_samples;
    sw.sample_seed = a.sample_seed;
    sw.timeline = timeline_from_name(a.timeline);
    SweepReport report = capacity_sweep(base, sw, sched);
    write_file(a.out, report.to_csv());

    RunManifest man;
    man.command = argv;
    man.master_seed = a.seed;
    man.config = a.train_flags.to_json();
    man.config["subcommand"] = "sweep";
    man.config["dataset"] = a.dataset;
    man.config["m_values"] = a.m_values;
    man.config["sampler"] = a.sampler;
    man.config["K"] = a.K;
    man.config["num_samples"] = a.num_samples;
    man.config["seed"] = a.seed;
    man.config["sample_seed"] = a.sample_seed;
    man.config["timeline"] = a.timeline;
    man.config["out"] = a.out;
    man.add_input(a.dataset);
    man.add_output(a.out);
    save_manifest(a.manifest.empty() ? a.out + ".manifest.json" : a.manifest, man);

    std::cout << "sweep wrote " << report.rows.size() << " rows to " << a.out << "\n";
    for (const auto &r : report.rows)
        std::cout << "  m=" << r.m << ": tv " << format_double(r.tv) << " loss "
                  << format_double(r.final_loss) << "\n";
    return 0;
}

// ---- kernel-check ----

struct KernelCheckArgs {
    std::uint64_t seed = 17;
    int trials = 100;
    std::string dump_matrix;
    int d = 2, m = 2;
    double s = 0.25, t = 0.75;
    std::string manifest;
};

int run_kernel_check(const KernelCheckArgs &a, const std::vector<std::string> &argv) {
    NoiseSchedule sched;
    bool ok = true;

    double worst_row = 0.0, worst_ck = 0.0;
    bool absorbing_ok = true;
    for (int trial = 0; trial < a.trials; ++trial) {
        Rng rng = Rng::stream(a.seed, std::uint64_t(trial));
        VocabSpec spec(1 + int(rng.uniform_int(16)), 1 + int(rng.uniform_int(8)));
        double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
        double s = std::min({u1, u2, u3});
        double t = std::max({u1, u2, u3});
        double u = u1 + u2 + u3 - s - t;
        if (!(s < u && u < t)) continue;  // ties are measure-zero; skip

        auto M_su = transition_matrix(s, u, sched, spec);
        auto M_ut = transition_matrix(u, t, sched, spec);
        auto M_st = transition_matrix(s, t, sched, spec);
        int n = spec.total();
        for (int i = 0; i < n; ++i) {
            double row = 0.0;
            for (int j = 0; j < n; ++j) row += M_st[std::size_t(i) * n + j];
            worst_row = std::max(worst_row, std::abs(row - 1.0));
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k)
                    acc += M_su[std::size_t(i) * n + k] * M_ut[std::size_t(k) * n + j];
                worst_ck = std::max(worst_ck, std::abs(acc - M_st[std::size_t(i) * n + j]));
            }
        }
        for (int i = 0; i < spec.d; ++i)
            for (int j = 0; j < n; ++j)
                if (j < spec.d && j != i && M_st[std::size_t(i) * n + j] != 0.0)
                    absorbing_ok = false;
        for (int i = spec.d; i < n; ++i)
            for (int j = 0; j < spec.d; ++j)
                if (M_st[std::size_t(i) * n + j] != 0.0) absorbing_ok = false;
    }

    // m = 1: one absorbing slot, the kernel collapses to the single-mask form.
    bool reduction_ok = true;
    for (int d = 1; d <= 16; ++d) {
        VocabSpec spec(d, 1);
        for (auto [s, t] : {std::pair{0.0, 0.4}, std::pair{0.3, 0.7}, std::pair{0.5, 0.9}}) {
            double ratio = fwd_ratio(sched, s, t);
            for (int i = 1; i <= d; ++i) {
                if (forward_step_prob(Token::valid(i), Token::valid(i), s, t, sched, spec) != ratio)
                    reduction_ok = false;
                if (forward_step_prob(Token::valid(i), Token::mask(1), s, t, sched, spec) !=
                    1.0 - ratio)
                    reduction_ok = false;
            }
            if (forward_step_prob(Token::mask(1), Token::mask(1), s, t, sched, spec) != 1.0)
                reduction_ok = false;
        }
    }

    auto line = [&](const char *name, bool pass, const std::string &detail) {
        std::cout << (pass ? "[PASS] " : "[FAIL] ") << name;
        if (!detail.empty()) std::cout << "  (" << detail << ")";
        std::cout << "\n";
        ok = ok && pass;
    };
    line("row-stochastic", worst_row <= 1e-12, "max |row sum - 1| = " + format_double(worst_row));
    line("chapman-kolmogorov", worst_ck <= 1e-10, "max entry error = " + format_double(worst_ck));
    line("absorbing-structure", absorbing_ok, "valid->other-valid and mask->valid stay zero");
    line("single-mask-reduction", reduction_ok, "m=1 kernel matches the single-mask form");

    if (!a.dump_matrix.empty()) {
        VocabSpec spec(a.d, a.m);
        auto M = transition_matrix(a.s, a.t, sched, spec);
        std::ostringstream os;
        os.precision(17);
        int n = spec.total();
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                if (j) os << ',';
                os << M[std::size_t(i) * n + j];
            }
            os << '\n';
        }
        write_file(a.dump_matrix, os.str());

        RunManifest man;
        man.command = argv;
        man.master_seed = a.seed;
        man.config = {{"subcommand", "kernel-check"}, {"seed", a.seed}, {"trials", a.trials},
                      {"d", a.d},                     {"m", a.m},       {"s", a.s},
                      {"t", a.t},                     {"dump_matrix", a.dump_matrix}};
        man.add_output(a.dump_matrix);
        save_manifest(a.manifest.empty() ? a.dump_matrix + ".manifest.json" : a.manifest, man);
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char **argv) {
    std::vector<std::string> raw_argv = capture_argv(argc, argv);

    CLI::App app{"multi-index absorbing diffusion toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value file merged under the flags");

    GenDataArgs gd;
    auto *gen = app.add_subcommand("gen-data", "synthesize a toy dataset");
    gen->add_option("--kind", gd.kind, "grid|markov")
        ->required()
        ->check(CLI::IsMember({"grid", "markov"}));
    gen->add_option("--side", gd.side, "grid: tile side length")->check(CLI::PositiveNumber);
    gen->add_option("--d", gd.d, "valid code count")->check(CLI::PositiveNumber);
    gen->add_option("--m", gd.m, "mask slot count")->check(CLI::PositiveNumber);
    gen->add_option("--classes", gd.classes, "grid: class count")->check(CLI::PositiveNumber);
    gen->add_option("--L", gd.L, "markov: sequence length")->check(CLI::PositiveNumber);
    gen->add_option("--rows", gd.rows, "markov: transition rows, e.g. '0.7,0.3;0.4,0.6'");
    gen->add_option("--seed", gd.seed, "generator seed");
    gen->add_option("--out", gd.out, "dataset path")->required();
    gen->add_option("--manifest", gd.manifest, "manifest path");

    TrainArgs ta;
    auto *tr = app.add_subcommand("train", "fit the linear denoiser");
    tr->add_option("--dataset", ta.dataset, "dataset path")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", ta.out, "model snapshot path")->required();
    tr->add_option("--metrics", ta.metrics, "metrics CSV path");
    tr->add_option("--manifest", ta.manifest, "manifest path");
    tr->add_option("--seed", ta.seed, "training seed");
    tr->add_flag("--save-best", ta.save_best, "snapshot the best-loss step instead of the last");
    ta.flags.attach(tr);

    SampleArgs sa;
    auto *sm = app.add_subcommand("sample", "generate sequences");
    sm->add_option("--dataset", sa.dataset, "dataset path (exact denoiser)")
        ->check(CLI::ExistingFile);
    sm->add_option("--denoiser", sa.denoiser, "exact|linear")
        ->check(CLI::IsMember({"exact", "linear"}));
    sm->add_option("--model", sa.model, "model snapshot (linear denoiser)")
        ->check(CLI::ExistingFile);
    sm->add_option("--label", sa.label, "class label; omit for unconditional");
    sm->add_option("--num-samples", sa.num_samples, "number of runs")->check(CLI::PositiveNumber);
    sm->add_option("--seed", sa.seed, "master seed; run i uses stream(seed, i)");
    sm->add_option("--inpaint", sa.inpaint, "flat-index file of pinned tokens")
        ->check(CLI::ExistingFile);
    sm->add_option("--out", sa.out, "samples CSV path")->required();
    sm->add_option("--image", sa.image, "PGM montage path (square L only)");
    sm->add_option("--manifest", sa.manifest, "manifest path");
    sa.flags.attach(sm);

    EvalArgs ea;
    auto *ev = app.add_subcommand("eval", "score a samples file against a dataset");
    ev->add_option("--dataset", ea.dataset, "dataset path")->required()->check(CLI::ExistingFile);
    ev->add_option("--samples", ea.samples, "samples CSV from the sample subcommand")
        ->required()
        ->check(CLI::ExistingFile);
    ev->add_option("--out", ea.out, "report CSV path")->required();
    ev->add_option("--manifest", ea.manifest, "manifest path");

    BenchArgs ba;
    auto *be = app.add_subcommand("bench", "sampler discrepancy benchmark");
    be->add_option("--dataset", ba.dataset, "dataset path")->required()->check(CLI::ExistingFile);
    be->add_option("--denoiser", ba.denoiser, "exact|linear")
        ->check(CLI::IsMember({"exact", "linear"}));
    be->add_option("--model", ba.model, "model snapshot (linear denoiser)")
        ->check(CLI::ExistingFile);
    be->add_option("--samplers", ba.samplers, "comma list of samplers")->delimiter(',');
    be->add_option("--step-counts", ba.step_counts, "comma list of K values")->delimiter(',');
    be->add_option("--seeds", ba.seeds, "comma list of cell seeds")->delimiter(',');
    be->add_option("--num-samples", ba.num_samples, "samples per cell")
        ->check(CLI::PositiveNumber);
    be->add_option("--g0-list", ba.g0_list, "comma list of mvtm g0 values")->delimiter(',');
    be->add_option("--g0-family", ba.g0_family, "draw this many g0 values uniform on [0.5,4]");
    be->add_option("--g0-seed", ba.g0_seed, "seed for the drawn g0 family");
    be->add_flag("--unconditional", ba.unconditional, "ignore labels when sampling");
    be->add_option("--out", ba.out, "bench CSV path")->required();
    be->add_option("--manifest", ba.manifest, "manifest path");
    ba.flags.attach(be);

    SweepArgs wa;
    auto *sw = app.add_subcommand("sweep", "noise-capacity sweep (retrain per m)");
    sw->add_option("--dataset", wa.dataset, "base dataset path")
        ->required()
        ->check(CLI::ExistingFile);
    sw->add_option("--m-values", wa.m_values, "comma list of mask slot counts")->delimiter(',');
    sw->add_option("--sampler", wa.sampler, "sampler for the per-m evaluation")
        ->check(CLI::IsMember({"rehash", "mvtm", "dfm", "hybrid"}));
    sw->add_option("--K", wa.K, "reverse steps for the per-m evaluation")
        ->check(CLI::PositiveNumber);
    sw->add_option("--num-samples", wa.num_samples, "samples per m")->check(CLI::PositiveNumber);
    sw->add_option("--seed", wa.seed, "training seed");
    sw->add_option("--sample-seed", wa.sample_seed, "sampling seed");
    sw->add_option("--timeline", wa.timeline, "linear|arccos|square|cosine")
        ->check(CLI::IsMember({"linear", "arccos", "square", "cosine"}));
    sw->add_option("--out", wa.out, "sweep CSV path")->required();
    sw->add_option("--manifest", wa.manifest, "manifest path");
    wa.train_flags.attach(sw);

    KernelCheckArgs ka;
    auto *kc = app.add_subcommand("kernel-check", "kernel algebra invariant suite");
    kc->add_option("--seed", ka.seed, "seed for random configurations");
    kc->add_option("--trials", ka.trials, "random configurations")->check(CLI::PositiveNumber);
    kc->add_option("--dump-matrix", ka.dump_matrix, "write one transition matrix as CSV");
    kc->add_option("--d", ka.d, "dump: valid code count")->check(CLI::PositiveNumber);
    kc->add_option("--m", ka.m, "dump: mask slot count")->check(CLI::PositiveNumber);
    kc->add_option("--s", ka.s, "dump: source time");
    kc->add_option("--t", ka.t, "dump: target time");
    kc->add_option("--manifest", ka.manifest, "manifest path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*gen) return run_gen_data(gd, raw_argv);
        if (*tr) return run_train(ta, raw_argv);
        if (*sm) return run_sample(sa, raw_argv);
        if (*ev) return run_eval(ea, raw_argv);
        if (*be) return run_bench(ba, raw_argv);
        if (*sw) return run_sweep(wa, raw_argv);
        if (*kc) return run_kernel_check(ka, raw_argv);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
