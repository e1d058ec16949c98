#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memshape/experiment.hpp"

namespace {

memshape::ExperimentConfig build_config(const std::string& config_path,
                                        const std::vector<std::string>& flag_overrides,
                                        const std::vector<std::string>& set_overrides) {
    memshape::ExperimentConfig cfg;
    if (!config_path.empty()) memshape::config_load_file(cfg, config_path);
    for (const auto& assignment : flag_overrides) memshape::config_apply_override(cfg, assignment);
    for (const auto& assignment : set_overrides) memshape::config_apply_override(cfg, assignment);
    return cfg;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string token = text.substr(pos, comma - pos);
        if (!token.empty()) seeds.push_back(std::stoull(token));
        pos = comma + 1;
    }
    if (seeds.empty()) throw memshape::ConfigError("no seeds in list: " + text);
    return seeds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory-graph-guided advantage shaping for PPO on gridworlds"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train one agent and write a run directory");
    std::string train_config, train_env, train_prior, train_llm, train_llm_script, train_shaping,
        train_out;
    std::int64_t train_seed = -1;
    std::vector<std::string> train_sets;
    train->add_option("--config", train_config, "JSON config file");
    train->add_option("--env", train_env, "Environment id: frozenlake8x8 | doorkey");
    train->add_option("--seed", train_seed, "Training seed");
    train->add_option("--prior", train_prior, "Offline prior JSON file");
    train->add_option("--llm", train_llm, "Guidance provider: off | mock | http");
    train->add_option("--llm-script", train_llm_script, "Mock provider script (JSON list)");
    train->add_option("--shaping", train_shaping, "Advantage shaping: on | off");
    train->add_option("--out", train_out, "Run output directory");
    train->add_option("--set", train_sets, "Generic key=value config override")->take_all();

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on unseen seeds");
    std::string eval_checkpoint, eval_seeds;
    int eval_episodes = 100, eval_size = 6;
    bool eval_no_slip = false;
    eval->add_option("--checkpoint", eval_checkpoint, "Policy checkpoint path")->required();
    eval->add_option("--seeds", eval_seeds, "Comma-separated eval seeds")->required();
    eval->add_option("--episodes", eval_episodes, "Total evaluation episodes");
    eval->add_option("--size", eval_size, "DoorKey grid size");
    eval->add_flag("--no-slippery", eval_no_slip, "Disable FrozenLake slip dynamics");

    // compare
    auto* compare = app.add_subcommand("compare", "Steps-to-threshold comparison of paired runs");
    std::vector<std::string> compare_a, compare_b;
    double compare_threshold = 0.5;
    compare->add_option("--a", compare_a, "metrics.csv list, arm A")->required()->take_all();
    compare->add_option("--b", compare_b, "metrics.csv list, arm B (paired by position)")
        ->required()
        ->take_all();
    compare->add_option("--threshold", compare_threshold, "Trailing-mean return threshold");

    // curves
    auto* curves = app.add_subcommand("curves", "Aggregate runs into a smoothed curve CSV");
    std::vector<std::string> curve_runs;
    std::string curve_out;
    curves->add_option("--runs", curve_runs, "metrics.csv files")->required()->take_all();
    curves->add_option("--out", curve_out, "Output CSV path")->required();

    // dump-layout
    auto* dump = app.add_subcommand("dump-layout", "Print a seeded environment layout");
    std::string dump_env = "doorkey";
    std::uint64_t dump_seed = 0;
    int dump_size = 6;
    bool dump_no_slip = false;
    dump->add_option("--env", dump_env, "Environment id");
    dump->add_option("--seed", dump_seed, "Layout seed");
    dump->add_option("--size", dump_size, "DoorKey grid size");
    dump->add_flag("--no-slippery", dump_no_slip, "Disable FrozenLake slip dynamics");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train) {
            std::vector<std::string> flags;
            if (!train_env.empty()) flags.push_back("env=" + train_env);
            if (train_seed >= 0) flags.push_back("seed=" + std::to_string(train_seed));
            if (!train_prior.empty()) flags.push_back("prior_path=" + train_prior);
            if (!train_llm.empty()) flags.push_back("llm_provider=" + train_llm);
            if (!train_llm_script.empty()) flags.push_back("llm_script_path=" + train_llm_script);
            if (!train_shaping.empty()) {
                if (train_shaping != "on" && train_shaping != "off")
                    throw memshape::ConfigError("--shaping must be on or off");
                flags.push_back(std::string("shaping_enabled=") +
                                (train_shaping == "on" ? "true" : "false"));
            }
            if (!train_out.empty()) flags.push_back("out_dir=" + train_out);
            memshape::ExperimentConfig cfg = build_config(train_config, flags, train_sets);
            const memshape::TrainResult result = memshape::run_train(cfg);
            std::cout << "run_dir: " << result.run_dir << "\n"
                      << "iterations: " << result.iterations << "\n"
                      << "env_steps: " << result.env_steps << "\n"
                      << "final_trailing_return: " << result.final_trailing_return << "\n"
                      << "final_trailing_success: " << result.final_trailing_success << "\n"
                      << "graph_size: " << result.graph_size << "\n"
                      << "llm_queries: " << result.llm_queries << "\n";
        } else if (*eval) {
            const memshape::EvalReport report =
                memshape::run_eval(eval_checkpoint, parse_seed_list(eval_seeds), eval_episodes,
                                   !eval_no_slip, eval_size);
            std::cout << report.to_json().dump(2) << "\n";
        } else if (*compare) {
            const memshape::SweepComparison result =
                memshape::compare_many(compare_a, compare_b, compare_threshold);
            nlohmann::json doc = {{"wins_a", result.wins_a},
                                  {"wins_b", result.wins_b},
                                  {"ties", result.ties},
                                  {"per_pair", nlohmann::json::array()}};
            for (const auto& pair : result.per_pair) {
                const auto encode = [](double v) -> nlohmann::json {
                    if (std::isinf(v)) return "inf";
                    return v;
                };
                doc["per_pair"].push_back(
                    {{"steps_a", encode(pair.steps_a)}, {"steps_b", encode(pair.steps_b)}});
            }
            std::cout << doc.dump(2) << "\n";
        } else if (*curves) {
            memshape::emit_curves(curve_runs, curve_out);
            std::cout << "wrote " << curve_out << "\n";
        } else if (*dump) {
            auto env = memshape::make_env(dump_env, !dump_no_slip, dump_size);
            env->seed(dump_seed);
            env->reset();
            std::cout << env->dump_layout();
        }
    } catch (const memshape::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const memshape::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
