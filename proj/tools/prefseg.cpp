// prefseg: command-line front end.
//
//   prefseg gen-world --config world.json --out data/ --n 50
//   prefseg run --manifest data/manifest.json --config run.json --mode sim --out runs/a
//   prefseg eval --round runs/a/round_03
//   prefseg export-report --run runs/a --out csv
#include <csignal>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "prefseg/prefseg.hpp"
#include "prefseg/service_api.hpp"

namespace {

using namespace prefseg;

int cmd_gen_world(const std::string& config_path, const std::string& out, int n) {
    SyntheticWorldConfig cfg;
    std::ifstream is(config_path);
    if (!is) throw IoError("missing world config: " + config_path);
    cfg = nlohmann::json::parse(is).get<SyntheticWorldConfig>();
    const auto m = generate_world(cfg, n, out);
    std::cout << "wrote " << m.records.size() << " records to " << (std::filesystem::path(out) / "manifest.json").string()
              << '\n';
    return 0;
}

std::string random_session_id() {
    std::random_device rd;
    std::ostringstream os;
    os << std::hex << rd() << rd();
    return os.str();
}

int cmd_run(const std::string& manifest_path, const std::string& config_path, const std::string& mode,
            const std::string& out, bool resume, bool cumulative, const std::string& bind, int port) {
    auto config = load_run_config(config_path);
    config.output_dir = out;
    if (cumulative) config.cumulative = true;
    config.oracle_mode = mode == "human" ? OracleMode::human : OracleMode::simulated;
    const auto data = load_manifest(manifest_path);

    if (config.oracle_mode == OracleMode::simulated) {
        SimulatedOracle oracle(config.oracle.flip_probability, config.seed);
        Orchestrator orch(data, config, oracle);
        const auto res = orch.run(resume);
        std::cout << reports_csv(res.reports);
        return 0;
    }

    // Human mode: SIGINT/SIGTERM close the session; the run persists what it
    // has and leaves a resume.json behind.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    FeedbackBroker broker(random_session_id());
    auto opts = ServiceOptions::from_env();
    opts.run_id = std::filesystem::path(out).filename().string();
    FeedbackService service(broker, opts);
    const int bound = service.start(bind, port);
    std::cerr << "feedback service on http://" << bind << ':' << bound << "  session=" << broker.session_id() << '\n';

    std::thread watcher([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        broker.close();
    });
    watcher.detach();

    HumanOracle oracle(broker, std::chrono::milliseconds(std::int64_t(config.oracle.human_timeout_s * 1000)),
                       config.oracle.timeout_policy);
    Orchestrator orch(data, config, oracle, &broker);
    int rc = 0;
    try {
        const auto res = orch.run(resume);
        std::cout << reports_csv(res.reports);
    } catch (const std::exception& e) {
        std::cerr << "run stopped: " << e.what() << "\n(resume with --resume; see " << out << "/resume.json)\n";
        rc = 3;
    }
    broker.close();
    service.stop();
    return rc;
}

int cmd_eval(const std::string& round) {
    const auto [recomputed, stored] = replay_round(round);
    std::cout << recomputed.dump(2) << '\n';
    if (recomputed != stored) {
        std::cerr << "report mismatch: persisted report differs from replay\n";
        return 1;
    }
    std::cerr << "replay matches persisted report\n";
    return 0;
}

int cmd_export(const std::string& run, const std::string& format) {
    const auto reports = load_reports(run);
    if (reports.empty()) throw IoError("no completed rounds under " + run);
    if (format == "csv") {
        std::cout << reports_csv(reports);
    } else {
        std::cout << nlohmann::json(reports).dump(2) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mask learning driven by pairwise reviewer verdicts"};
    app.require_subcommand(1);

    std::string world_config, world_out;
    int world_n = 10;
    auto* gen = app.add_subcommand("gen-world", "Generate a synthetic dataset");
    gen->add_option("--config", world_config, "World config JSON")->required();
    gen->add_option("--out", world_out, "Output directory")->required();
    gen->add_option("--n", world_n, "Number of images")->check(CLI::PositiveNumber);

    std::string manifest, run_config, mode = "sim", run_out, bind = "127.0.0.1";
    bool resume = false, cumulative = false;
    int port = 8080;
    auto* run = app.add_subcommand("run", "Run the multi-round annotation loop");
    run->add_option("--manifest", manifest, "Dataset manifest")->required();
    run->add_option("--config", run_config, "Run config JSON")->required();
    run->add_option("--mode", mode, "Oracle mode")->check(CLI::IsMember({"sim", "human"}));
    run->add_option("--out", run_out, "Output directory")->required();
    run->add_flag("--resume", resume, "Continue from the last completed round");
    run->add_flag("--cumulative", cumulative, "Train on all rounds' pseudo-labels");
    run->add_option("--bind", bind, "Service address (human mode)");
    run->add_option("--port", port, "Service port (human mode, 0 = any)");

    std::string round;
    auto* eval = app.add_subcommand("eval", "Recompute a round report from persisted state");
    eval->add_option("--round", round, "Round directory")->required();

    std::string run_dir = ".", format = "csv";
    auto* exp = app.add_subcommand("export-report", "Print all round reports");
    exp->add_option("--run", run_dir, "Run output directory");
    exp->add_option("--out", format, "Format")->check(CLI::IsMember({"csv", "json"}));

    CLI11_PARSE(app, argc, argv);
    try {
        if (*gen) return cmd_gen_world(world_config, world_out, world_n);
        if (*run) return cmd_run(manifest, run_config, mode, run_out, resume, cumulative, bind, port);
        if (*eval) return cmd_eval(round);
        if (*exp) return cmd_export(run_dir, format);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
