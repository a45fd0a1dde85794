#include "dsprune/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "dsprune/errors.hpp"
#include "dsprune/rng.hpp"

namespace dsprune {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
    }
}

double parse_float(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
    }
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto& t = cfg.train;
    auto& d = cfg.data;
    if (key == "train.epochs") {
        t.epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "train.batch_size") {
        t.batch_size = static_cast<int>(parse_int(key, value));
    } else if (key == "train.lr") {
        t.lr = static_cast<float>(parse_float(key, value));
    } else if (key == "train.momentum") {
        t.momentum = static_cast<float>(parse_float(key, value));
    } else if (key == "train.seed") {
        t.seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "train.finetune_epochs") {
        t.finetune_epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "train.finetune_lr") {
        t.finetune_lr = static_cast<float>(parse_float(key, value));
    } else if (key == "train.sparsity_ratio") {
        t.sparsity_ratio = parse_float(key, value);
    } else if (key == "train.score_method") {
        t.score_method = parse_score_method(value);
    } else if (key == "train.sample_cap") {
        t.sample_cap = static_cast<int>(parse_int(key, value));
    } else if (key == "data.source") {
        if (value != "idx" && value != "synthetic") {
            throw ConfigError("data.source must be 'idx' or 'synthetic', got '" + value + "'");
        }
        d.source = value;
    } else if (key == "data.train_images") {
        d.train_images = value;
    } else if (key == "data.train_labels") {
        d.train_labels = value;
    } else if (key == "data.test_images") {
        d.test_images = value;
    } else if (key == "data.test_labels") {
        d.test_labels = value;
    } else if (key == "data.train_subset") {
        d.train_subset = static_cast<int>(parse_int(key, value));
    } else if (key == "data.eval_subset") {
        d.eval_subset = static_cast<int>(parse_int(key, value));
    } else if (key == "data.background") {
        d.background = value;
    } else if (key == "data.mnistm_seed") {
        d.mnistm_seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "data.digits_seed") {
        d.digits_seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "out.dir") {
        cfg.out_dir = value;
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value', got '" + trimmed + "'");
        }
        set_key(cfg, trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

void apply_override(RunConfig& cfg, const std::string& key_eq_value) {
    const auto eq = key_eq_value.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + key_eq_value + "' is not of the form key=value");
    }
    set_key(cfg, trim(key_eq_value.substr(0, eq)), trim(key_eq_value.substr(eq + 1)));
}

void validate(const RunConfig& cfg) {
    validate_config(cfg.train);
    const auto& d = cfg.data;
    if (d.train_subset < 1) throw ConfigError("data.train_subset must be >= 1");
    if (d.eval_subset < 1) throw ConfigError("data.eval_subset must be >= 1");
    if (d.source == "idx") {
        if (d.train_images.empty() || d.train_labels.empty() || d.test_images.empty() ||
            d.test_labels.empty()) {
            throw ConfigError(
                "data.source = idx requires data.train_images/train_labels/test_images/"
                "test_labels paths");
        }
    }
    if (d.background != "procedural" && d.background.rfind("dir:", 0) != 0) {
        throw ConfigError("data.background must be 'procedural' or 'dir:<path>', got '" +
                          d.background + "'");
    }
}

namespace {

BackgroundSource background_from_config(const std::string& background) {
    BackgroundSource bg;
    if (background == "procedural") {
        bg.mode = BackgroundSource::Mode::ProceduralTexture;
    } else {
        bg.mode = BackgroundSource::Mode::ImageDirectory;
        bg.path = background.substr(4);
    }
    return bg;
}

}  // namespace

DomainData load_domain_data(const DataConfig& data) {
    Dataset train_gray, eval_gray;
    if (data.source == "idx") {
        Dataset full_train = load_mnist_idx(data.train_images, data.train_labels, "source");
        Dataset full_test = load_mnist_idx(data.test_images, data.test_labels, "target");
        if (full_train.size() < data.train_subset) {
            throw InputError("train set has " + std::to_string(full_train.size()) +
                             " samples, fewer than data.train_subset");
        }
        if (full_test.size() < data.eval_subset) {
            throw InputError("test set has " + std::to_string(full_test.size()) +
                             " samples, fewer than data.eval_subset");
        }
        train_gray = take_subset(full_train, 0, data.train_subset);
        eval_gray = take_subset(full_test, 0, data.eval_subset);
    } else {
        // One corpus, disjoint slices: train gets the head, eval the tail.
        Dataset corpus =
            make_synthetic_digits(data.train_subset + data.eval_subset, data.digits_seed);
        train_gray = take_subset(corpus, 0, data.train_subset);
        eval_gray = take_subset(corpus, data.train_subset, data.eval_subset);
    }

    DomainData out;
    out.source = grayscale_to_rgb(train_gray);
    out.source.domain_tag = "source";
    out.target = synth_mnistm(eval_gray, background_from_config(data.background), data.mnistm_seed);
    return out;
}

}  // namespace dsprune
