// Acceptance gate, part 2: the desk-scale end-to-end criteria. Generates the
// dataset, trains the default model for 20000 steps, and drives the ablation,
// swap, and determinism checks through the same command layer the CLI uses.
// Expect roughly an hour of wall time on one core.

#include "fdis/commands.hpp"
#include "fdis/config.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace fdis;

namespace {

namespace fs = std::filesystem;

struct Result {
    bool pass = false;
    std::string note;
};

int g_failures = 0;
bool g_data_ok = false;

void report(int k, const char* desc, const Result& r) {
    std::printf("CRITERION %d: %s — %s", k, r.pass ? "PASS" : "FAIL", desc);
    if (!r.note.empty()) std::printf(" [%s]", r.note.c_str());
    std::printf("\n");
    std::fflush(stdout);
    if (!r.pass) ++g_failures;
}

Result guarded(const std::function<Result()>& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        return {false, std::string("exception: ") + e.what()};
    }
}

double minutes_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
}

std::string fmt(const char* spec, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, x);
    return buf;
}

RunConfig base_config() {
    RunConfig cfg;
    cfg.cache = "acceptance_data/scenes.bin";
    cfg.codec = "acceptance_data/codec.bin";
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void require_data() {
    if (!g_data_ok) throw std::runtime_error("dataset generation failed, see log above");
}

struct LossRow {
    std::size_t step = 0;
    double fm = 0.0;
    double orth = 0.0;
    double total = 0.0;
};

std::vector<LossRow> parse_loss_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::vector<LossRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LossRow r;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf", &r.step, &r.fm, &r.orth, &r.total) != 4)
            throw std::runtime_error("bad loss row: " + line);
        rows.push_back(r);
    }
    return rows;
}

// ---- criterion 8: desk-scale training ----

Result criterion_training() {
    require_data();
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = base_config();
    cfg.out = "acceptance_runs/main";
    fs::remove_all(cfg.out);
    if (cmd_train(cfg, std::cout) != 0) return {false, "train command failed"};
    const double mins = minutes_since(t0);

    const std::vector<LossRow> rows = parse_loss_csv("acceptance_runs/main/loss.csv");
    if (rows.size() != cfg.steps) return {false, "loss.csv row count off"};
    double fm_100 = 0.0;
    bool found = false;
    for (const LossRow& r : rows)
        if (r.step == 100) {
            fm_100 = r.fm;
            found = true;
            break;
        }
    if (!found) return {false, "no step-100 row"};
    const double fm_end = rows.back().fm;

    // non-overlapping 1000-step means of the total loss; the trend check
    // counts decreasing transitions between consecutive windows
    const std::size_t window = 1000;
    std::vector<double> means;
    for (std::size_t lo = 0; lo + window <= rows.size(); lo += window) {
        double s = 0.0;
        for (std::size_t i = lo; i < lo + window; ++i) s += rows[i].total;
        means.push_back(s / static_cast<double>(window));
    }
    std::size_t down = 0;
    for (std::size_t i = 1; i < means.size(); ++i)
        if (means[i] < means[i - 1]) ++down;
    const std::size_t transitions = means.size() - 1;
    const std::size_t need =
        static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(transitions)));

    Result r;
    r.pass = fm_end < 0.1 * fm_100 && down >= need && mins < 60.0;
    r.note = "fm " + fmt("%.4g", fm_100) + " @100 -> " + fmt("%.4g", fm_end) + " @end (" +
             fmt("%.3g", 100.0 * fm_end / fm_100) + "%), windows down " + std::to_string(down) +
             "/" + std::to_string(transitions) + ", " + fmt("%.1f", mins) + " min";
    return r;
}

// ---- criterion 9: ablation direction ----

Result criterion_ablation() {
    require_data();
    RunConfig cfg = base_config();
    cfg.out = "acceptance_runs/ablate";
    // full-length runs: the claim is about trained models, and short pilots
    // measured the comparison drifting with training length, so the arms
    // train exactly as the main run does. This is most of the gate's wall
    // time.
    cfg.ablate_seeds = 5;
    fs::remove_all(cfg.out);
    if (cmd_ablate(cfg, std::cout) != 0) return {false, "ablate command failed"};

    std::ifstream in("acceptance_runs/ablate/ablation.csv");
    if (!in) return {false, "ablation.csv missing"};
    double dci[2] = {0.0, 0.0}, mg[2] = {0.0, 0.0};
    std::size_t n[2] = {0, 0};
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = line.find(',', c1 + 1);
        const std::string arm = line.substr(0, c1);
        if (line.compare(c1 + 1, 7, "summary") == 0) continue;
        double fv_v = 0.0, dci_v = 0.0, mig_v = 0.0;
        if (std::sscanf(line.c_str() + c2 + 1, "%lf,%lf,%lf", &fv_v, &dci_v, &mig_v) != 3)
            return {false, "bad ablation row: " + line};
        const int a = arm == "base" ? 0 : 1;
        dci[a] += dci_v;
        mg[a] += mig_v;
        ++n[a];
    }
    if (n[0] == 0 || n[1] == 0) return {false, "missing arm rows"};
    for (int a : {0, 1}) {
        dci[a] /= static_cast<double>(n[a]);
        mg[a] /= static_cast<double>(n[a]);
    }

    Result r;
    r.pass = dci[1] >= dci[0] && mg[1] >= mg[0];
    r.note = "mean dci " + fmt("%.4g", dci[0]) + " -> " + fmt("%.4g", dci[1]) + ", mean mig " +
             fmt("%.4g", mg[0]) + " -> " + fmt("%.4g", mg[1]) +
             (r.pass ? "" : "; FLAGGED REGRESSION: the penalty did not help here");
    return r;
}

// ---- criterion 10: swap controllability ----

std::size_t parse_successes(const std::string& report) {
    const std::size_t pos = report.find("successes = ");
    if (pos == std::string::npos) throw std::runtime_error("no successes line");
    return static_cast<std::size_t>(std::strtoull(report.c_str() + pos + 12, nullptr, 10));
}

Result criterion_swaps() {
    require_data();
    RunConfig cfg = base_config();
    cfg.out = "acceptance_runs/main";
    if (!fs::exists("acceptance_runs/main/checkpoint.bin"))
        return {false, "no trained model (criterion 8 must run first)"};

    std::size_t wins = 0, trials = 0;
    std::string notes;
    const struct {
        std::size_t factor;
        std::uint64_t seed;
        const char* tag;
    } sweeps[] = {{2, 0, "x"}, {4, 1, "hue"}};
    for (const auto& sw : sweeps) {
        cfg.seed = sw.seed;  // independent scene pairs for the two sweeps
        SwapArgs args;
        args.factor = sw.factor;
        args.trials = 100;
        cmd_swap(cfg, args, std::cout);  // nonzero = integrator failures, already in the rate
        const std::string report = slurp("acceptance_runs/main/swap_report.txt");
        fs::copy_file("acceptance_runs/main/swap_report.txt",
                      "acceptance_runs/main/swap_report_" + std::string(sw.tag) + ".txt",
                      fs::copy_options::overwrite_existing);
        std::cout << "---- swap sweep (" << sw.tag << ") ----\n" << report;
        const std::size_t s = parse_successes(report);
        wins += s;
        trials += args.trials;
        if (!notes.empty()) notes += ", ";
        notes += std::string(sw.tag) + " " + std::to_string(s) + "/100";
    }
    const double rate = static_cast<double>(wins) / static_cast<double>(trials);
    Result r;
    r.pass = rate >= 0.60;
    r.note = "combined " + fmt("%.1f", 100.0 * rate) + "% (" + notes + ")";
    return r;
}

// ---- criterion 11: determinism ----

Result criterion_determinism() {
    require_data();
    RunConfig cfg = base_config();
    cfg.seed = 42;
    cfg.steps = 300;
    cfg.checkpoint_every = 100;
    for (const char* out : {"acceptance_runs/det_a", "acceptance_runs/det_b"}) {
        cfg.out = out;
        fs::remove_all(out);
        if (cmd_train(cfg, std::cout) != 0) return {false, "train failed"};
        if (cmd_evaluate(cfg, std::cout) != 0) return {false, "evaluate failed"};
    }
    std::size_t bytes = 0;
    for (const char* f : {"checkpoint.bin", "loss.csv", "metrics.txt"}) {
        const std::string a = slurp(fs::path("acceptance_runs/det_a") / f);
        const std::string b = slurp(fs::path("acceptance_runs/det_b") / f);
        if (a != b) return {false, std::string(f) + " differs between identical-seed runs"};
        bytes += a.size();
    }
    return {true, "checkpoint.bin, loss.csv, metrics.txt bit-identical (" +
                      std::to_string(bytes) + " bytes compared)"};
}

}  // namespace

int main() {
    {
        RunConfig cfg = base_config();
        g_data_ok = cmd_generate_data(cfg, std::cout) == 0;
        if (!g_data_ok) std::printf("dataset generation FAILED; training criteria cannot run\n");
    }
    report(8, "20000-step default training drops fm below 10% of its step-100 value with a "
              "decreasing 1000-step trend, under 60 min",
           guarded(criterion_training));
    report(9, "over 5 paired seeds, the orthogonality penalty does not hurt mean DCI or mean MIG",
           guarded(criterion_ablation));
    report(10, "at least 60% of 200 random x/hue swaps pass the strict fidelity check",
           guarded(criterion_swaps));
    report(11, "identical-seed end-to-end runs produce byte-identical checkpoints, loss CSVs, "
               "and metric reports",
           guarded(criterion_determinism));
    return g_failures == 0 ? 0 : 1;
}
