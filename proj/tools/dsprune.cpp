// Command-line frontend. Every subcommand is a thin wrapper over the library;
// behavior is reachable through the headers alone.
//
// Exit codes: 0 ok, 1 configuration error, 2 data/format error, 3 run error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dsprune/config.hpp"
#include "dsprune/errors.hpp"
#include "dsprune/experiment.hpp"
#include "dsprune/pruning.hpp"
#include "dsprune/saliency.hpp"
#include "dsprune/svg_plot.hpp"

namespace {

using namespace dsprune;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;  // --out beats config, which beats $DSPRUNE_OUT
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "run configuration file");
    if (config_required) opt->required();
    cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
    cmd->add_option("--out", args.out_dir, "output directory");
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = parse_config_file(args.config_path);
    for (const auto& o : args.overrides) apply_override(cfg, o);
    if (const char* env = std::getenv("DSPRUNE_OUT"); env && cfg.out_dir == "runs") {
        cfg.out_dir = env;
    }
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    validate(cfg);
    return cfg;
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonArgs& common, const std::string& output) {
    const RunConfig cfg = resolve_config(common);
    const DomainData data = load_domain_data(cfg.data);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = output.empty() ? cfg.out_dir + "/mnistm.dsds" : output;
    save_dataset(data.target, path);
    std::cout << "wrote " << path << " (" << data.target.size() << " samples)\n";
    std::cout << "checksum: " << hex64(dataset_checksum(data.target)) << "\n";
    return 0;
}

int cmd_train(const CommonArgs& common) {
    const RunConfig cfg = resolve_config(common);
    const DomainData data = load_domain_data(cfg.data);
    Model model = build_convnet<float>(
        {data.source.channels(), data.source.height(), data.source.width()}, 10, cfg.train.seed);
    const auto history = train(model, data.source, cfg.train);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path =
        cfg.out_dir + "/trained_s" + std::to_string(cfg.train.seed) + ".dsck";
    save_checkpoint(model, path, cfg.train.seed);
    for (std::size_t e = 0; e < history.size(); ++e) {
        std::printf("epoch %zu: mean loss %.6f\n", e, static_cast<double>(history[e]));
    }
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_score(const CommonArgs& common, const std::string& checkpoint) {
    const RunConfig cfg = resolve_config(common);
    const DomainData data = load_domain_data(cfg.data);
    const Model model = load_checkpoint(checkpoint);
    const std::set<std::string> layers(model.prunable_layers.begin(),
                                       model.prunable_layers.end());
    const std::optional<int> cap =
        cfg.train.sample_cap > 0 ? std::optional<int>(cfg.train.sample_cap) : std::nullopt;
    auto src = collect_stats(model, data.source, layers, cap);
    auto tgt = collect_stats(model, data.target, layers, cap);

    std::filesystem::create_directories(cfg.out_dir);
    std::vector<ActivationStats> src_list, tgt_list;
    for (const auto& [id, s] : src) src_list.push_back(s);
    for (const auto& [id, s] : tgt) tgt_list.push_back(s);
    save_stats(src_list, cfg.out_dir + "/stats_source.dsas");
    save_stats(tgt_list, cfg.out_dir + "/stats_target.dsas");

    for (const auto& id : model.prunable_layers) {
        const SaliencyScore s = dss_scores(src.at(id), tgt.at(id));
        double lo = 1e9, hi = -1e9, mean = 0.0;
        for (double v : s.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            mean += v;
        }
        mean /= static_cast<double>(s.values.size());
        std::printf("%s: %zu channels, dss min %.4f mean %.4f max %.4f\n", id.c_str(),
                    s.values.size(), lo, mean, hi);
    }
    std::cout << "wrote " << cfg.out_dir << "/stats_source.dsas and stats_target.dsas\n";
    return 0;
}

int cmd_prune(const CommonArgs& common, const std::string& checkpoint,
              const std::string& stats_source, const std::string& stats_target) {
    const RunConfig cfg = resolve_config(common);
    const Model model = load_checkpoint(checkpoint);

    std::map<std::string, ActivationStats> src, tgt;
    const bool needs_stats = cfg.train.score_method == ScoreMethod::DSS ||
                             cfg.train.score_method == ScoreMethod::ReverseDSS;
    if (needs_stats) {
        if (!stats_source.empty() && !stats_target.empty()) {
            for (auto& s : load_stats(stats_source)) src.emplace(s.layer_id, std::move(s));
            for (auto& s : load_stats(stats_target)) tgt.emplace(s.layer_id, std::move(s));
        } else {
            const DomainData data = load_domain_data(cfg.data);
            const std::set<std::string> layers(model.prunable_layers.begin(),
                                               model.prunable_layers.end());
            const std::optional<int> cap =
                cfg.train.sample_cap > 0 ? std::optional<int>(cfg.train.sample_cap) : std::nullopt;
            src = collect_stats(model, data.source, layers, cap);
            tgt = collect_stats(model, data.target, layers, cap);
        }
    }

    PrunePlan plan;
    for (const auto& id : model.prunable_layers) {
        SaliencyScore s;
        switch (cfg.train.score_method) {
            case ScoreMethod::DSS: s = dss_scores(src.at(id), tgt.at(id)); break;
            case ScoreMethod::ReverseDSS:
                s = reverse_scores(dss_scores(src.at(id), tgt.at(id)));
                break;
            case ScoreMethod::L2: s = l2_scores(model, id); break;
            case ScoreMethod::Random: s = random_scores(model, id, cfg.train.seed); break;
        }
        plan.entries.push_back(select_bottom_k(s, cfg.train.sparsity_ratio));
    }

    const Model pruned = apply_prune(model, plan);
    const SurgeryReport report = sparsity_report(model, pruned, plan);
    std::filesystem::create_directories(cfg.out_dir);
    save_plan(plan, cfg.out_dir + "/prune.plan");
    save_checkpoint(pruned, cfg.out_dir + "/pruned.dsck", cfg.train.seed);

    for (const auto& l : report.layers) {
        std::printf("%s: %d -> %d channels\n", l.layer_id.c_str(), l.channels_before,
                    l.channels_after);
    }
    std::printf("channel sparsity %.4f, params %lld -> %lld\n", report.achieved_sparsity,
                static_cast<long long>(report.params_before),
                static_cast<long long>(report.params_after));
    std::cout << "wrote " << cfg.out_dir << "/prune.plan and pruned.dsck\n";
    return 0;
}

int cmd_finetune(const CommonArgs& common, const std::string& checkpoint) {
    const RunConfig cfg = resolve_config(common);
    const DomainData data = load_domain_data(cfg.data);
    Model model = load_checkpoint(checkpoint);
    const auto history = finetune(model, data.source, cfg.train);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/finetuned.dsck";
    save_checkpoint(model, path, cfg.train.seed);
    for (std::size_t e = 0; e < history.size(); ++e) {
        std::printf("finetune epoch %zu: mean loss %.6f\n", e, static_cast<double>(history[e]));
    }
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& checkpoint, const std::string& domain) {
    const RunConfig cfg = resolve_config(common);
    const DomainData data = load_domain_data(cfg.data);
    const Model model = load_checkpoint(checkpoint);
    const Dataset& ds = domain == "target" ? data.target : data.source;
    std::printf("%s accuracy: %.6f\n", domain.c_str(), evaluate(model, ds));
    return 0;
}

int cmd_pipeline(const CommonArgs& common) {
    const RunConfig cfg = resolve_config(common);
    const DomainData data = load_domain_data(cfg.data);
    PipelineOptions opts;
    opts.out_dir = cfg.out_dir;
    opts.log = &std::cout;
    const MetricsRecord rec = run_pipeline(cfg.train, data.source, data.target, opts);
    std::printf("record: %s sparsity %.2f seed %llu source %.4f target %.4f -> %.4f (%.1fs)\n",
                rec.method.c_str(), rec.sparsity, static_cast<unsigned long long>(rec.seed),
                rec.source_acc, rec.target_before_ft, rec.target_after_ft, rec.wall_time_s);
    return 0;
}

int cmd_sweep(const CommonArgs& common, const std::string& ratios_arg,
              const std::string& methods_arg, const std::string& seeds_arg) {
    const RunConfig cfg = resolve_config(common);
    const DomainData data = load_domain_data(cfg.data);

    std::vector<double> ratios;
    for (const auto& r : split_list(ratios_arg)) ratios.push_back(std::stod(r));
    std::vector<ScoreMethod> methods;
    for (const auto& m : split_list(methods_arg)) methods.push_back(parse_score_method(m));
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
    if (ratios.empty() || methods.empty() || seeds.empty()) {
        throw ConfigError("sweep needs nonempty --ratios, --methods and --seeds lists");
    }

    const SweepResult result = run_sweep(cfg.train, ratios, methods, seeds, data.source,
                                         data.target, cfg.out_dir, &std::cout);
    std::printf("sweep complete: %zu records, %zu failures; metrics in %s/metrics.csv\n",
                result.records.size(), result.failures.size(), cfg.out_dir.c_str());
    if (!result.failures.empty()) {
        for (const auto& f : result.failures) std::cerr << "error: sweep cell failed: " << f << "\n";
        return 3;
    }
    return 0;
}

int cmd_plot(const std::string& metrics_path, const std::string& svg_path) {
    const auto records = load_metrics(metrics_path);
    const std::string svg = render_sweep_svg(records);
    std::ofstream os(svg_path, std::ios::trunc | std::ios::binary);
    if (!os) throw FormatError("cannot open file for writing: " + svg_path);
    os << svg;
    if (!os) throw FormatError("failed writing file: " + svg_path);
    std::cout << "wrote " << svg_path << " (" << records.size() << " records)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structural channel pruning by cross-domain activation similarity"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, score_args, prune_args, finetune_args, eval_args,
        pipeline_args, sweep_args;
    std::string synth_output;
    std::string score_ckpt, prune_ckpt, finetune_ckpt, eval_ckpt;
    std::string prune_stats_src, prune_stats_tgt;
    std::string eval_domain = "target";
    std::string sweep_ratios = "0.0,0.1,0.2,0.3,0.4,0.5,0.6";
    std::string sweep_methods = "dss,l2";
    std::string sweep_seeds = "1,2,3";
    std::string plot_metrics, plot_svg = "sweep.svg";

    auto* synth = app.add_subcommand("synth", "synthesize the color-blended target dataset");
    add_common(synth, synth_args);
    synth->add_option("--output", synth_output, "output container path");

    auto* train_cmd = app.add_subcommand("train", "train the source-domain model");
    add_common(train_cmd, train_args);

    auto* score = app.add_subcommand("score", "collect activation stats and report scores");
    add_common(score, score_args);
    score->add_option("--checkpoint", score_ckpt, "trained checkpoint")->required();

    auto* prune = app.add_subcommand("prune", "select and remove channels");
    add_common(prune, prune_args);
    prune->add_option("--checkpoint", prune_ckpt, "trained checkpoint")->required();
    prune->add_option("--stats-source", prune_stats_src, "source stats container");
    prune->add_option("--stats-target", prune_stats_tgt, "target stats container");

    auto* finetune_cmd = app.add_subcommand("finetune", "finetune a pruned checkpoint");
    add_common(finetune_cmd, finetune_args);
    finetune_cmd->add_option("--checkpoint", finetune_ckpt, "pruned checkpoint")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a domain");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--domain", eval_domain, "source|target")
        ->check(CLI::IsMember({"source", "target"}));

    auto* pipeline = app.add_subcommand("pipeline", "train, score, prune, finetune, evaluate");
    add_common(pipeline, pipeline_args);

    auto* sweep = app.add_subcommand("sweep", "cross product of ratios, methods and seeds");
    add_common(sweep, sweep_args);
    sweep->add_option("--ratios", sweep_ratios, "comma-separated sparsity ratios");
    sweep->add_option("--methods", sweep_methods, "comma-separated score methods");
    sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds");

    auto* plot = app.add_subcommand("plot", "render the sparsity/accuracy SVG from metrics");
    plot->add_option("--metrics", plot_metrics, "metrics CSV path")->required();
    plot->add_option("--svg", plot_svg, "output SVG path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_args, synth_output);
        if (train_cmd->parsed()) return cmd_train(train_args);
        if (score->parsed()) return cmd_score(score_args, score_ckpt);
        if (prune->parsed()) return cmd_prune(prune_args, prune_ckpt, prune_stats_src, prune_stats_tgt);
        if (finetune_cmd->parsed()) return cmd_finetune(finetune_args, finetune_ckpt);
        if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_ckpt, eval_domain);
        if (pipeline->parsed()) return cmd_pipeline(pipeline_args);
        if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_ratios, sweep_methods, sweep_seeds);
        if (plot->parsed()) return cmd_plot(plot_metrics, plot_svg);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
