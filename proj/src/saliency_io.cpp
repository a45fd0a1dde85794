#include "dsprune/saliency.hpp"

#include <cstring>
#include <fstream>
#include <mutex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dsprune {

namespace detail {

void tune_malloc_for_churn() {
#if defined(__GLIBC__)
    // Training allocates and frees multi-megabyte activation buffers every
    // step; by default glibc serves those via mmap and returns them to the
    // OS on free, which costs a page-fault storm per batch.
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_MAX, 0);
        mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    });
#endif
}

}  // namespace detail

const char* score_method_name(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::DSS: return "dss";
        case ScoreMethod::L2: return "l2";
        case ScoreMethod::ReverseDSS: return "reverse_dss";
        case ScoreMethod::Random: return "random";
    }
    return "?";
}

ScoreMethod parse_score_method(const std::string& name) {
    if (name == "dss") return ScoreMethod::DSS;
    if (name == "l2") return ScoreMethod::L2;
    if (name == "reverse_dss") return ScoreMethod::ReverseDSS;
    if (name == "random") return ScoreMethod::Random;
    throw ConfigError("unknown score method '" + name +
                      "' (expected dss, l2, reverse_dss or random)");
}

SaliencyScore dss_scores(const ActivationStats& src, const ActivationStats& tgt) {
    if (src.layer_id != tgt.layer_id) {
        throw InputError("dss_scores: stats are for different layers ('" + src.layer_id + "' vs '" +
                         tgt.layer_id + "')");
    }
    if (src.channels != tgt.channels || src.map_size != tgt.map_size) {
        throw InputError("dss_scores: stats shapes disagree for layer '" + src.layer_id + "' (" +
                         std::to_string(src.channels) + "x" + std::to_string(src.map_size) +
                         " vs " + std::to_string(tgt.channels) + "x" +
                         std::to_string(tgt.map_size) + "); were they collected on the same model?");
    }
    SaliencyScore s;
    s.layer_id = src.layer_id;
    s.method = ScoreMethod::DSS;
    s.values.resize(static_cast<std::size_t>(src.channels));
    for (int c = 0; c < src.channels; ++c) {
        const double* a = src.row(c);
        const double* b = tgt.row(c);
        double acc = 0.0;
        for (int i = 0; i < src.map_size; ++i) acc += a[i] * b[i];
        s.values[static_cast<std::size_t>(c)] = acc;
    }
    return s;
}

SaliencyScore multi_domain_dss(const std::vector<const ActivationStats*>& stats) {
    if (stats.size() < 2) throw InputError("multi_domain_dss: need at least 2 domains");
    SaliencyScore acc;
    int pairs = 0;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        for (std::size_t j = i + 1; j < stats.size(); ++j) {
            SaliencyScore p = dss_scores(*stats[i], *stats[j]);
            if (pairs == 0) {
                acc = std::move(p);
            } else {
                for (std::size_t c = 0; c < acc.values.size(); ++c) acc.values[c] += p.values[c];
            }
            ++pairs;
        }
    }
    for (auto& v : acc.values) v /= pairs;
    return acc;
}

SaliencyScore reverse_scores(const SaliencyScore& s) {
    SaliencyScore r = s;
    r.method = ScoreMethod::ReverseDSS;
    for (auto& v : r.values) v = -v;
    return r;
}

// ---------------------------------------------------------------------------
// Stats container
// ---------------------------------------------------------------------------

namespace {

constexpr char kStatsMagic[4] = {'D', 'S', 'A', 'S'};
constexpr std::uint32_t kStatsVersion = 1;

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

std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError("stats container: truncated file " + path);
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
    if (len > (1u << 20)) throw FormatError("stats container: implausible string length in " + path);
    std::string s(len, '\0');
    if (len && !is.read(s.data(), len)) {
        throw FormatError("stats container: truncated file " + path);
    }
    return s;
}

}  // namespace

void save_stats(const std::vector<ActivationStats>& stats, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open file for writing: " + path);
    os.write(kStatsMagic, 4);
    put_u32(os, kStatsVersion);
    put_u32(os, static_cast<std::uint32_t>(stats.size()));
    for (const auto& s : stats) {
        put_str(os, s.layer_id);
        put_str(os, s.domain_tag);
        put_u32(os, static_cast<std::uint32_t>(s.channels));
        put_u32(os, static_cast<std::uint32_t>(s.map_size));
        put_u64(os, static_cast<std::uint64_t>(s.sample_count));
        for (double v : s.mean) {
            const float f = static_cast<float>(v);
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    if (!os) throw FormatError("failed writing file: " + path);
}

std::vector<ActivationStats> load_stats(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open file: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kStatsMagic, 4) != 0) {
        throw FormatError("stats container: bad magic in " + path);
    }
    const std::uint32_t version = get_u32(is, path);
    if (version != kStatsVersion) {
        throw FormatError("stats container: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = get_u32(is, path);
    std::vector<ActivationStats> out;
    out.reserve(count);
    for (std::uint32_t r = 0; r < count; ++r) {
        ActivationStats s;
        s.layer_id = get_str(is, path);
        s.domain_tag = get_str(is, path);
        s.channels = static_cast<int>(get_u32(is, path));
        s.map_size = static_cast<int>(get_u32(is, path));
        s.sample_count = static_cast<long>(get_u64(is, path));
        const std::size_t n = static_cast<std::size_t>(s.channels) * s.map_size;
        s.mean.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            float f;
            if (!is.read(reinterpret_cast<char*>(&f), 4)) {
                throw FormatError("stats container: truncated file " + path);
            }
            s.mean[i] = static_cast<double>(f);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace dsprune
