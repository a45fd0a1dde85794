#include "dsprune/pruning.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "dsprune/errors.hpp"

namespace dsprune {

PrunePlanEntry select_bottom_k(const SaliencyScore& s, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw InputError("select_bottom_k: sparsity ratio must be in [0,1), got " +
                         std::to_string(ratio));
    }
    const int channels = static_cast<int>(s.values.size());
    if (channels < 1) throw InputError("select_bottom_k: empty score vector");
    int n = static_cast<int>(std::floor(ratio * channels));
    n = std::min(n, channels - 1);  // keep at least one channel

    std::vector<int> order(static_cast<std::size_t>(channels));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (s.values[static_cast<std::size_t>(a)] != s.values[static_cast<std::size_t>(b)]) {
            return s.values[static_cast<std::size_t>(a)] < s.values[static_cast<std::size_t>(b)];
        }
        return a < b;  // prune the lower index first on ties
    });

    PrunePlanEntry e;
    e.layer_id = s.layer_id;
    e.original_channels = channels;
    e.ratio = ratio;
    e.kept.assign(order.begin() + n, order.end());
    std::sort(e.kept.begin(), e.kept.end());
    return e;
}

std::string plan_to_text(const PrunePlan& plan) {
    std::ostringstream os;
    for (const auto& e : plan.entries) {
        os << e.layer_id << ": kept=[";
        for (std::size_t i = 0; i < e.kept.size(); ++i) {
            if (i) os << ',';
            os << e.kept[i];
        }
        os << "] of " << e.original_channels << '\n';
    }
    return os.str();
}

PrunePlan plan_from_text(const std::string& text) {
    PrunePlan plan;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto colon = line.find(':');
        const auto lbr = line.find("kept=[");
        const auto rbr = line.find(']', lbr == std::string::npos ? 0 : lbr);
        const auto ofpos = line.find(" of ", rbr == std::string::npos ? 0 : rbr);
        if (colon == std::string::npos || lbr == std::string::npos || rbr == std::string::npos ||
            ofpos == std::string::npos) {
            throw FormatError("prune plan: malformed line " + std::to_string(lineno) + ": " + line);
        }
        PrunePlanEntry e;
        e.layer_id = line.substr(first, colon - first);
        const std::string list = line.substr(lbr + 6, rbr - (lbr + 6));
        std::istringstream ls(list);
        std::string tok;
        while (std::getline(ls, tok, ',')) {
            if (tok.empty()) continue;
            e.kept.push_back(std::stoi(tok));
        }
        e.original_channels = std::stoi(line.substr(ofpos + 4));
        if (e.kept.empty() || e.original_channels < 1) {
            throw FormatError("prune plan: empty keep set on line " + std::to_string(lineno));
        }
        e.ratio = 1.0 - static_cast<double>(e.kept.size()) / e.original_channels;
        plan.entries.push_back(std::move(e));
    }
    return plan;
}

void save_plan(const PrunePlan& plan, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open file for writing: " + path);
    os << plan_to_text(plan);
    if (!os) throw FormatError("failed writing file: " + path);
}

PrunePlan load_plan(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return plan_from_text(buf.str());
}

}  // namespace dsprune
