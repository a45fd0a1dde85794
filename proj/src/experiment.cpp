#include "dsprune/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dsprune/optim.hpp"

namespace dsprune {

void validate_config(const TrainConfig& cfg) {
    if (cfg.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(cfg.lr > 0.0f)) throw ConfigError("train.lr must be positive");
    if (!(cfg.momentum >= 0.0f && cfg.momentum < 1.0f)) {
        throw ConfigError("train.momentum must be in [0,1)");
    }
    if (cfg.finetune_epochs < 0) throw ConfigError("train.finetune_epochs must be >= 0");
    if (!(cfg.finetune_lr > 0.0f)) throw ConfigError("train.finetune_lr must be positive");
    if (!(cfg.sparsity_ratio >= 0.0 && cfg.sparsity_ratio < 1.0)) {
        throw ConfigError("train.sparsity_ratio must be in [0,1)");
    }
    if (cfg.sample_cap < 0) throw ConfigError("train.sample_cap must be >= 0");
}

namespace {

std::vector<float> sgd_loop(Model& model, const Dataset& source, int epochs, float lr,
                            float momentum, std::uint64_t seed, int batch_size) {
    if (source.size() == 0) throw InputError("training requires a nonempty dataset");
    detail::tune_malloc_for_churn();
    std::vector<float> history;
    if (epochs == 0) return history;

    Batcher batcher(source, batch_size, seed);
    Sgd opt(model.parameters(), lr, momentum);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double total = 0.0;
        for (int b = 0; b < batcher.batch_count(); ++b) {
            Batch bt = batcher.batch(epoch, b);
            Tape tape;
            Tensor logits = forward(model, bt.images, &tape);
            Tensor loss = softmax_cross_entropy(logits, bt.labels, &tape);
            const float l = loss.data()[0];
            if (!std::isfinite(l)) {
                throw RunError("loss diverged (not finite) at epoch " + std::to_string(epoch));
            }
            tape.backward(loss);
            opt.step();
            total += static_cast<double>(l) * static_cast<double>(bt.labels.size());
        }
        history.push_back(static_cast<float>(total / source.size()));
    }
    return history;
}

}  // namespace

std::vector<float> train(Model& model, const Dataset& source, const TrainConfig& cfg) {
    validate_config(cfg);
    return sgd_loop(model, source, cfg.epochs, cfg.lr, cfg.momentum, cfg.seed, cfg.batch_size);
}

std::vector<float> finetune(Model& model, const Dataset& source, const TrainConfig& cfg) {
    validate_config(cfg);
    return sgd_loop(model, source, cfg.finetune_epochs, cfg.finetune_lr, cfg.momentum, cfg.seed,
                    cfg.batch_size);
}

double evaluate(const Model& model, const Dataset& ds) {
    if (ds.size() == 0) throw InputError("evaluate: empty dataset");
    const int chunk = 256;
    const std::size_t stride = static_cast<std::size_t>(ds.channels()) * ds.height() * ds.width();
    long correct = 0;
    for (int lo = 0; lo < ds.size(); lo += chunk) {
        const int n = std::min(chunk, ds.size() - lo);
        Tensor images({n, ds.channels(), ds.height(), ds.width()});
        std::copy(ds.images.data() + lo * stride, ds.images.data() + (lo + n) * stride,
                  images.data());
        Tensor logits = forward(model, images);
        const int k = logits.dim(1);
        for (int i = 0; i < n; ++i) {
            const float* row = logits.data() + static_cast<std::size_t>(i) * k;
            int best = 0;
            for (int j = 1; j < k; ++j)
                if (row[j] > row[best]) best = j;
            if (best == ds.labels[static_cast<std::size_t>(lo + i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / ds.size();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'S', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensor(std::ostream& os, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError("checkpoint: truncated file " + path);
    }
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is, const std::string& path) {
    const std::uint64_t lo = get_u32(is, path);
    const std::uint64_t hi = get_u32(is, path);
    return lo | (hi << 32);
}

std::string get_str(std::istream& is, const std::string& path) {
    const std::uint32_t len = get_u32(is, path);
    if (len > (1u << 16)) throw FormatError("checkpoint: implausible string length in " + path);
    std::string s(len, '\0');
    if (len && !is.read(s.data(), len)) throw FormatError("checkpoint: truncated file " + path);
    return s;
}

Tensor get_tensor(std::istream& is, const std::string& path) {
    const std::uint32_t rank = get_u32(is, path);
    if (rank > 8) throw FormatError("checkpoint: implausible tensor rank in " + path);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(is, path));
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(float)))) {
        throw FormatError("checkpoint: truncated file " + path);
    }
    return t;
}

std::uint8_t layer_kind_code(LayerKind k) { return static_cast<std::uint8_t>(k); }

LayerKind layer_kind_from_code(std::uint8_t c, const std::string& path) {
    if (c > static_cast<std::uint8_t>(LayerKind::Dense)) {
        throw FormatError("checkpoint: unknown layer kind in " + path);
    }
    return static_cast<LayerKind>(c);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path, std::uint64_t seed) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open file for writing: " + path);
    os.write(kCheckpointMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u64(os, seed);
    for (int d : model.input_shape) put_u32(os, static_cast<std::uint32_t>(d));
    put_u32(os, static_cast<std::uint32_t>(model.class_count));
    put_u32(os, static_cast<std::uint32_t>(model.layers.size()));
    for (const auto& l : model.layers) {
        os.put(static_cast<char>(layer_kind_code(l.kind)));
        put_str(os, l.id);
        put_u32(os, static_cast<std::uint32_t>(l.stride));
        put_u32(os, static_cast<std::uint32_t>(l.padding));
        put_u32(os, static_cast<std::uint32_t>(l.pool));
        os.put(l.has_params() ? 1 : 0);
        if (l.has_params()) {
            put_tensor(os, l.weight);
            put_tensor(os, l.bias);
        }
    }
    put_u32(os, static_cast<std::uint32_t>(model.prunable_layers.size()));
    for (const auto& p : model.prunable_layers) put_str(os, p);
    if (!os) throw FormatError("failed writing checkpoint: " + path);
}

Model load_checkpoint(const std::string& path, std::uint64_t* seed_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = get_u32(is, path);
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version) +
                          " in " + path);
    }
    const std::uint64_t seed = get_u64(is, path);
    if (seed_out) *seed_out = seed;

    Model m;
    for (auto& d : m.input_shape) d = static_cast<int>(get_u32(is, path));
    m.class_count = static_cast<int>(get_u32(is, path));
    const std::uint32_t layer_count = get_u32(is, path);
    if (layer_count > 1024) throw FormatError("checkpoint: implausible layer count in " + path);
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        LayerSpec l;
        int kind_byte = is.get();
        if (kind_byte == EOF) throw FormatError("checkpoint: truncated file " + path);
        l.kind = layer_kind_from_code(static_cast<std::uint8_t>(kind_byte), path);
        l.id = get_str(is, path);
        l.stride = static_cast<int>(get_u32(is, path));
        l.padding = static_cast<int>(get_u32(is, path));
        l.pool = static_cast<int>(get_u32(is, path));
        const int has_params = is.get();
        if (has_params == EOF) throw FormatError("checkpoint: truncated file " + path);
        if (has_params) {
            l.weight = get_tensor(is, path);
            l.bias = get_tensor(is, path);
            l.weight.set_requires_grad(true);
            l.bias.set_requires_grad(true);
        }
        m.layers.push_back(std::move(l));
    }
    const std::uint32_t prunable_count = get_u32(is, path);
    if (prunable_count > layer_count) {
        throw FormatError("checkpoint: implausible prunable layer count in " + path);
    }
    for (std::uint32_t i = 0; i < prunable_count; ++i) m.prunable_layers.push_back(get_str(is, path));
    shape_check(m);
    return m;
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

std::string metrics_csv_header() {
    return "method,sparsity,seed,source_acc,target_before_ft,target_after_ft,wall_time_s";
}

namespace {

std::string format_record(const MetricsRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%llu,%.6f,%.6f,%.6f,%.3f", r.method.c_str(),
                  r.sparsity, static_cast<unsigned long long>(r.seed), r.source_acc,
                  r.target_before_ft, r.target_after_ft, r.wall_time_s);
    return buf;
}

bool file_has_header(const std::string& path) {
    std::ifstream is(path);
    if (!is) return false;
    std::string first;
    if (!std::getline(is, first)) return false;
    if (first != metrics_csv_header()) {
        throw FormatError("metrics file " + path + " has an unexpected header");
    }
    return true;
}

void append_records(const std::vector<MetricsRecord>& records, const std::string& path) {
    const bool existing = file_has_header(path);
    std::ofstream os(path, existing ? std::ios::app : std::ios::trunc);
    if (!os) throw FormatError("cannot open metrics file for writing: " + path);
    if (!existing) os << metrics_csv_header() << '\n';
    for (const auto& r : records) os << format_record(r) << '\n';
    if (!os) throw FormatError("failed writing metrics file: " + path);
}

}  // namespace

void export_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
    append_records(records, path);
}

std::vector<MetricsRecord> load_metrics(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open metrics file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("metrics file is empty: " + path);
    if (line != metrics_csv_header()) {
        throw FormatError("metrics file " + path + " has an unexpected header");
    }
    std::vector<MetricsRecord> out;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 7) {
            throw FormatError("metrics file " + path + ": line " + std::to_string(lineno) +
                              " has " + std::to_string(fields.size()) + " fields, expected 7");
        }
        try {
            MetricsRecord r;
            r.method = fields[0];
            r.sparsity = std::stod(fields[1]);
            r.seed = std::stoull(fields[2]);
            r.source_acc = std::stod(fields[3]);
            r.target_before_ft = std::stod(fields[4]);
            r.target_after_ft = std::stod(fields[5]);
            r.wall_time_s = std::stod(fields[6]);
            out.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw FormatError("metrics file " + path + ": malformed number on line " +
                              std::to_string(lineno));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace {

template <class Fn>
auto stage(const char* name, Fn&& fn) {
    try {
        return fn();
    } catch (const ShapeError& e) {
        throw ShapeError(std::string(name) + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(name) + ": " + e.what());
    } catch (const InputError& e) {
        throw InputError(std::string(name) + ": " + e.what());
    } catch (const StateError& e) {
        throw StateError(std::string(name) + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(std::string(name) + ": " + e.what());
    } catch (const RunError& e) {
        throw RunError(std::string(name) + ": " + e.what());
    }
}

void log_line(std::ostream* log, const std::string& line) {
    if (log) *log << line << '\n';
}

std::string run_prefix(const TrainConfig& cfg) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s_r%.2f_s%llu", score_method_name(cfg.score_method),
                  cfg.sparsity_ratio, static_cast<unsigned long long>(cfg.seed));
    return buf;
}

int infer_class_count(const Dataset& a, const Dataset& b) {
    int k = 1;
    for (int l : a.labels) k = std::max(k, l + 1);
    for (int l : b.labels) k = std::max(k, l + 1);
    return std::max(k, 2);
}

}  // namespace

MetricsRecord run_pipeline(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                           const PipelineOptions& opts) {
    validate_config(cfg);
    if (source.size() == 0 || target.size() == 0) {
        throw InputError("run_pipeline: datasets must be nonempty");
    }
    if (source.channels() != target.channels() || source.height() != target.height() ||
        source.width() != target.width()) {
        throw InputError("run_pipeline: source and target datasets must share the input shape");
    }
    namespace fs = std::filesystem;
    const bool persist = !opts.out_dir.empty();
    if (persist) fs::create_directories(opts.out_dir);
    const std::string prefix = persist ? opts.out_dir + "/" + run_prefix(cfg) : "";
    const auto t0 = std::chrono::steady_clock::now();

    // train (or adopt a cached deterministic training result)
    Model model = stage("train", [&] {
        if (opts.pretrained) return opts.pretrained->clone();
        Model m = build_convnet<float>({source.channels(), source.height(), source.width()},
                                       infer_class_count(source, target), cfg.seed);
        const auto history = train(m, source, cfg);
        return m;
    });
    if (persist) {
        save_checkpoint(model, opts.out_dir + "/trained_s" + std::to_string(cfg.seed) + ".dsck",
                        cfg.seed);
    }
    log_line(opts.log, "stage train: done (" + std::to_string(model.parameter_count()) + " params)");

    // score
    const std::set<std::string> prunable(model.prunable_layers.begin(),
                                         model.prunable_layers.end());
    std::vector<SaliencyScore> scores = stage("score", [&] {
        std::vector<SaliencyScore> out;
        const bool needs_stats = cfg.score_method == ScoreMethod::DSS ||
                                 cfg.score_method == ScoreMethod::ReverseDSS;
        std::map<std::string, ActivationStats> src_stats, tgt_stats;
        const std::map<std::string, ActivationStats>* src = opts.source_stats;
        const std::map<std::string, ActivationStats>* tgt = opts.target_stats;
        if (needs_stats && (!src || !tgt)) {
            const std::optional<int> cap =
                cfg.sample_cap > 0 ? std::optional<int>(cfg.sample_cap) : std::nullopt;
            src_stats = collect_stats(model, source, prunable, cap);
            tgt_stats = collect_stats(model, target, prunable, cap);
            src = &src_stats;
            tgt = &tgt_stats;
        }
        for (const auto& id : model.prunable_layers) {
            switch (cfg.score_method) {
                case ScoreMethod::DSS:
                    out.push_back(dss_scores(src->at(id), tgt->at(id)));
                    break;
                case ScoreMethod::ReverseDSS:
                    out.push_back(reverse_scores(dss_scores(src->at(id), tgt->at(id))));
                    break;
                case ScoreMethod::L2:
                    out.push_back(l2_scores(model, id));
                    break;
                case ScoreMethod::Random:
                    out.push_back(random_scores(model, id, cfg.seed));
                    break;
            }
        }
        return out;
    });
    log_line(opts.log, std::string("stage score: method ") + score_method_name(cfg.score_method));

    // select + prune
    PrunePlan plan = stage("select", [&] {
        PrunePlan p;
        for (const auto& s : scores) p.entries.push_back(select_bottom_k(s, cfg.sparsity_ratio));
        return p;
    });
    if (persist) save_plan(plan, prefix + ".plan");

    Model pruned = stage("prune", [&] { return apply_prune(model, plan); });
    const SurgeryReport report = sparsity_report(model, pruned, plan);
    if (persist) save_checkpoint(pruned, prefix + "_pruned.dsck", cfg.seed);
    {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "stage prune: channel sparsity %.4f, params %lld -> %lld",
                      report.achieved_sparsity, static_cast<long long>(report.params_before),
                      static_cast<long long>(report.params_after));
        log_line(opts.log, buf);
    }

    MetricsRecord rec;
    rec.method = score_method_name(cfg.score_method);
    rec.sparsity = cfg.sparsity_ratio;
    rec.seed = cfg.seed;
    rec.target_before_ft = stage("eval-target", [&] { return evaluate(pruned, target); });
    log_line(opts.log, "stage eval: target before finetune " + std::to_string(rec.target_before_ft));

    stage("finetune", [&] { return dsprune::finetune(pruned, source, cfg); });
    if (persist) save_checkpoint(pruned, prefix + "_finetuned.dsck", cfg.seed);

    rec.source_acc = stage("eval-source", [&] { return evaluate(pruned, source); });
    rec.target_after_ft = stage("eval-target", [&] { return evaluate(pruned, target); });
    log_line(opts.log, "stage eval: source " + std::to_string(rec.source_acc) +
                           ", target after finetune " + std::to_string(rec.target_after_ft));

    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (persist) export_metrics({rec}, opts.out_dir + "/metrics.csv");
    return rec;
}

SweepResult run_sweep(const TrainConfig& base, const std::vector<double>& ratios,
                      const std::vector<ScoreMethod>& methods,
                      const std::vector<std::uint64_t>& seeds, const Dataset& source,
                      const Dataset& target, const std::string& out_dir, std::ostream* log) {
    for (double r : ratios) {
        if (!(r >= 0.0 && r < 1.0)) {
            throw InputError("run_sweep: ratio " + std::to_string(r) + " outside [0,1)");
        }
    }
    SweepResult result;
    for (std::uint64_t seed : seeds) {
        TrainConfig cfg = base;
        cfg.seed = seed;

        Model trained = build_convnet<float>({source.channels(), source.height(), source.width()},
                                             infer_class_count(source, target), seed);
        train(trained, source, cfg);
        log_line(log, "sweep: trained seed " + std::to_string(seed));

        const bool needs_stats =
            std::any_of(methods.begin(), methods.end(), [](ScoreMethod m) {
                return m == ScoreMethod::DSS || m == ScoreMethod::ReverseDSS;
            });
        std::map<std::string, ActivationStats> src_stats, tgt_stats;
        if (needs_stats) {
            const std::set<std::string> prunable(trained.prunable_layers.begin(),
                                                 trained.prunable_layers.end());
            const std::optional<int> cap =
                cfg.sample_cap > 0 ? std::optional<int>(cfg.sample_cap) : std::nullopt;
            src_stats = collect_stats(trained, source, prunable, cap);
            tgt_stats = collect_stats(trained, target, prunable, cap);
        }

        for (double ratio : ratios) {
            for (ScoreMethod method : methods) {
                cfg.sparsity_ratio = ratio;
                cfg.score_method = method;
                PipelineOptions opts;
                opts.out_dir = out_dir;
                opts.log = nullptr;
                opts.pretrained = &trained;
                if (needs_stats) {
                    opts.source_stats = &src_stats;
                    opts.target_stats = &tgt_stats;
                }
                try {
                    MetricsRecord rec = run_pipeline(cfg, source, target, opts);
                    result.records.push_back(std::move(rec));
                    if (log) {
                        char buf[160];
                        std::snprintf(buf, sizeof(buf),
                                      "sweep: %s r=%.2f seed=%llu -> target %.4f / %.4f",
                                      score_method_name(method), ratio,
                                      static_cast<unsigned long long>(seed),
                                      result.records.back().target_before_ft,
                                      result.records.back().target_after_ft);
                        log_line(log, buf);
                    }
                } catch (const std::exception& e) {
                    char buf[96];
                    std::snprintf(buf, sizeof(buf), "%s r=%.2f seed=%llu: ",
                                  score_method_name(method), ratio,
                                  static_cast<unsigned long long>(seed));
                    result.failures.push_back(std::string(buf) + e.what());
                    log_line(log, "sweep FAILURE: " + result.failures.back());
                }
            }
        }
    }
    return result;
}

}  // namespace dsprune
