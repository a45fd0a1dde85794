#include "dsprune/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dsprune/errors.hpp"
#include "dsprune/rng.hpp"

namespace dsprune {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803u;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801u;

std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset) {
    if (offset + 4 > bytes.size()) {
        throw FormatError("idx: truncated at byte " + std::to_string(bytes.size()) +
                          ", expected 4-byte field at offset " + std::to_string(offset));
    }
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void append_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

}  // namespace

Tensor parse_idx_images(std::span<const unsigned char> bytes) {
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != kIdxImagesMagic) {
        throw FormatError("idx images: bad magic (expected 0x00000803)");
    }
    const std::uint32_t n = read_be32(bytes, 4);
    const std::uint32_t rows = read_be32(bytes, 8);
    const std::uint32_t cols = read_be32(bytes, 12);
    if (rows == 0 || cols == 0) throw FormatError("idx images: zero image dimensions");
    const std::size_t need = 16 + static_cast<std::size_t>(n) * rows * cols;
    if (bytes.size() < need) {
        throw FormatError("idx images: truncated at byte " + std::to_string(bytes.size()) +
                          ", expected " + std::to_string(need) + " bytes");
    }
    std::vector<float> pixels(static_cast<std::size_t>(n) * rows * cols);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        pixels[i] = static_cast<float>(bytes[16 + i]) / 255.0f;
    }
    return Tensor({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)},
                  std::move(pixels));
}

std::vector<int> parse_idx_labels(std::span<const unsigned char> bytes) {
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != kIdxLabelsMagic) {
        throw FormatError("idx labels: bad magic (expected 0x00000801)");
    }
    const std::uint32_t n = read_be32(bytes, 4);
    const std::size_t need = 8 + n;
    if (bytes.size() < need) {
        throw FormatError("idx labels: truncated at byte " + std::to_string(bytes.size()) +
                          ", expected " + std::to_string(need) + " bytes");
    }
    std::vector<int> labels(n);
    for (std::uint32_t i = 0; i < n; ++i) labels[i] = static_cast<int>(bytes[8 + i]);
    return labels;
}

std::vector<unsigned char> write_idx_images(const Tensor& images) {
    if (images.rank() != 4 || images.dim(1) != 1) {
        throw InputError("write_idx_images expects [N,1,h,w] grayscale images");
    }
    const int n = images.dim(0), h = images.dim(2), w = images.dim(3);
    std::vector<unsigned char> out;
    out.reserve(16 + images.size());
    append_be32(out, kIdxImagesMagic);
    append_be32(out, static_cast<std::uint32_t>(n));
    append_be32(out, static_cast<std::uint32_t>(h));
    append_be32(out, static_cast<std::uint32_t>(w));
    for (std::size_t i = 0; i < images.size(); ++i) {
        const float v = std::clamp(images.data()[i], 0.0f, 1.0f);
        out.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
    }
    return out;
}

std::vector<unsigned char> write_idx_labels(const std::vector<int>& labels) {
    std::vector<unsigned char> out;
    out.reserve(8 + labels.size());
    append_be32(out, kIdxLabelsMagic);
    append_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (int l : labels) {
        if (l < 0 || l > 255) throw InputError("write_idx_labels: label outside [0,255]");
        out.push_back(static_cast<unsigned char>(l));
    }
    return out;
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    const auto len = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!f) throw FormatError("failed reading file: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, std::span<const unsigned char> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("failed writing file: " + path);
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       const std::string& domain_tag) {
    Dataset ds;
    ds.images = parse_idx_images(read_file_bytes(images_path));
    ds.labels = parse_idx_labels(read_file_bytes(labels_path));
    ds.domain_tag = domain_tag;
    if (ds.images.dim(0) != static_cast<int>(ds.labels.size())) {
        throw FormatError("idx pair mismatch: " + std::to_string(ds.images.dim(0)) + " images vs " +
                          std::to_string(ds.labels.size()) + " labels");
    }
    return ds;
}

Dataset grayscale_to_rgb(const Dataset& ds) {
    if (ds.channels() != 1) throw InputError("grayscale_to_rgb: dataset already has 3 channels");
    const int n = ds.size(), h = ds.height(), w = ds.width();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Dataset out;
    out.images = Tensor({n, 3, h, w});
    out.labels = ds.labels;
    out.domain_tag = ds.domain_tag;
    for (int i = 0; i < n; ++i) {
        const float* src = ds.images.data() + static_cast<std::size_t>(i) * plane;
        float* dst = out.images.data() + static_cast<std::size_t>(i) * 3 * plane;
        for (int c = 0; c < 3; ++c) std::memcpy(dst + c * plane, src, plane * sizeof(float));
    }
    return out;
}

namespace {

// --- procedural background texture -----------------------------------------

// Smooth multi-scale color noise: coarse random RGB grids upsampled
// bilinearly and blended, then contrast-stretched. Stands in for photo
// patches so the target domain works without external downloads.
void procedural_patch(Rng& rng, int h, int w, float* out /* [3,h,w] */) {
    static constexpr int kScales[3] = {4, 7, 14};
    static constexpr double kWeights[3] = {0.45, 0.35, 0.20};
    std::fill(out, out + static_cast<std::size_t>(3) * h * w, 0.0f);
    for (int si = 0; si < 3; ++si) {
        const int s = kScales[si];
        std::array<double, 3 * 14 * 14> grid{};
        for (int i = 0; i < 3 * s * s; ++i) grid[static_cast<std::size_t>(i)] = rng.next_double();
        for (int c = 0; c < 3; ++c) {
            const double* g = grid.data() + static_cast<std::size_t>(c) * s * s;
            float* plane = out + static_cast<std::size_t>(c) * h * w;
            for (int y = 0; y < h; ++y) {
                const double gy = (h == 1) ? 0.0 : static_cast<double>(y) * (s - 1) / (h - 1);
                const int y0 = static_cast<int>(gy);
                const int y1 = std::min(y0 + 1, s - 1);
                const double fy = gy - y0;
                for (int x = 0; x < w; ++x) {
                    const double gx = (w == 1) ? 0.0 : static_cast<double>(x) * (s - 1) / (w - 1);
                    const int x0 = static_cast<int>(gx);
                    const int x1 = std::min(x0 + 1, s - 1);
                    const double fx = gx - x0;
                    const double v = g[y0 * s + x0] * (1 - fy) * (1 - fx) +
                                     g[y0 * s + x1] * (1 - fy) * fx +
                                     g[y1 * s + x0] * fy * (1 - fx) + g[y1 * s + x1] * fy * fx;
                    plane[y * w + x] += static_cast<float>(kWeights[si] * v);
                }
            }
        }
    }
    // widen the color range a little; convex blending pulls values to 0.5
    for (std::size_t i = 0; i < static_cast<std::size_t>(3) * h * w; ++i) {
        out[i] = std::clamp(0.5f + (out[i] - 0.5f) * 1.8f, 0.0f, 1.0f);
    }
}

// --- PPM (P6) photo patches -------------------------------------------------

struct RgbImage {
    int h = 0, w = 0;
    std::vector<float> pixels;  // [3,h,w] in [0,1]
};

RgbImage load_ppm(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> int {
        skip_space();
        int v = 0;
        bool any = false;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any) throw FormatError("ppm: malformed header in " + path);
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw FormatError("ppm: not a binary P6 file: " + path);
    }
    pos = 2;
    const int w = read_int();
    const int h = read_int();
    const int maxval = read_int();
    if (maxval != 255) throw FormatError("ppm: only maxval 255 supported: " + path);
    ++pos;  // single whitespace after maxval
    const std::size_t need = pos + static_cast<std::size_t>(3) * h * w;
    if (bytes.size() < need) throw FormatError("ppm: truncated pixel data: " + path);
    RgbImage img;
    img.h = h;
    img.w = w;
    img.pixels.resize(static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.pixels[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    static_cast<float>(bytes[pos + (static_cast<std::size_t>(y) * w + x) * 3 + c]) /
                    255.0f;
            }
        }
    }
    return img;
}

std::vector<RgbImage> load_background_images(const std::string& dir, int min_h, int min_w) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw ConfigError("background image directory not found: " + dir);
    }
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ppm") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
    std::vector<RgbImage> images;
    for (const auto& p : paths) {
        RgbImage img = load_ppm(p);
        if (img.h >= min_h && img.w >= min_w) images.push_back(std::move(img));
    }
    if (images.empty()) {
        throw ConfigError("background directory '" + dir + "' has no usable .ppm images of at least " +
                          std::to_string(min_h) + "x" + std::to_string(min_w));
    }
    return images;
}

}  // namespace

Dataset synth_mnistm(const Dataset& mnist, const BackgroundSource& bg, std::uint64_t seed) {
    if (mnist.channels() != 1) throw InputError("synth_mnistm: source must be grayscale");
    const int n = mnist.size(), h = mnist.height(), w = mnist.width();
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    std::vector<RgbImage> photos;
    if (bg.mode == BackgroundSource::Mode::ImageDirectory) {
        photos = load_background_images(bg.path, h, w);
    }

    Dataset out;
    out.images = Tensor({n, 3, h, w});
    out.labels = mnist.labels;
    out.domain_tag = "target";

    // Independent RNG stream per sample so parallel synthesis would be
    // order-independent.
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        float* dst = out.images.data() + static_cast<std::size_t>(i) * 3 * plane;
        if (bg.mode == BackgroundSource::Mode::ProceduralTexture) {
            procedural_patch(rng, h, w, dst);
        } else {
            const auto& img = photos[static_cast<std::size_t>(rng.next_below(photos.size()))];
            const int oy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(img.h - h + 1)));
            const int ox = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(img.w - w + 1)));
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < h; ++y) {
                    const float* src =
                        img.pixels.data() + (static_cast<std::size_t>(c) * img.h + oy + y) * img.w + ox;
                    std::copy(src, src + w, dst + c * plane + static_cast<std::size_t>(y) * w);
                }
            }
        }
        const float* digit = mnist.images.data() + static_cast<std::size_t>(i) * plane;
        for (int c = 0; c < 3; ++c) {
            float* cp = dst + c * plane;
            for (std::size_t p = 0; p < plane; ++p) cp[p] = std::fabs(cp[p] - digit[p]);
        }
    }
    return out;
}

Dataset take_subset(const Dataset& ds, int offset, int count) {
    if (offset < 0 || count < 1 || offset + count > ds.size()) {
        throw InputError("take_subset: range [" + std::to_string(offset) + "," +
                         std::to_string(offset + count) + ") outside dataset of " +
                         std::to_string(ds.size()));
    }
    const std::size_t stride = static_cast<std::size_t>(ds.channels()) * ds.height() * ds.width();
    Dataset out;
    out.images = Tensor({count, ds.channels(), ds.height(), ds.width()});
    std::copy(ds.images.data() + offset * stride, ds.images.data() + (offset + count) * stride,
              out.images.data());
    out.labels.assign(ds.labels.begin() + offset, ds.labels.begin() + offset + count);
    out.domain_tag = ds.domain_tag;
    return out;
}

// ---------------------------------------------------------------------------
// Batcher
// ---------------------------------------------------------------------------

Batcher::Batcher(const Dataset& ds, int batch_size, std::optional<std::uint64_t> shuffle_seed)
    : ds_(ds), batch_size_(batch_size), seed_(shuffle_seed) {
    if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
}

int Batcher::batch_count() const { return (ds_.size() + batch_size_ - 1) / batch_size_; }

std::vector<int> Batcher::permutation(int epoch) const {
    std::vector<int> order(static_cast<std::size_t>(ds_.size()));
    for (int i = 0; i < ds_.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    if (seed_) {
        Rng rng(mix_seed(*seed_, static_cast<std::uint64_t>(epoch)));
        for (int i = ds_.size() - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
    }
    return order;
}

Batch Batcher::batch(int epoch, int index) const {
    if (index < 0 || index >= batch_count()) throw InputError("batch index out of range");
    const auto order = permutation(epoch);
    const int lo = index * batch_size_;
    const int hi = std::min(ds_.size(), lo + batch_size_);
    const std::size_t stride = static_cast<std::size_t>(ds_.channels()) * ds_.height() * ds_.width();
    Batch b;
    b.images = Tensor({hi - lo, ds_.channels(), ds_.height(), ds_.width()});
    b.labels.resize(static_cast<std::size_t>(hi - lo));
    for (int i = lo; i < hi; ++i) {
        const int src = order[static_cast<std::size_t>(i)];
        std::copy(ds_.images.data() + src * stride, ds_.images.data() + (src + 1) * stride,
                  b.images.data() + static_cast<std::size_t>(i - lo) * stride);
        b.labels[static_cast<std::size_t>(i - lo)] = ds_.labels[static_cast<std::size_t>(src)];
    }
    return b;
}

// ---------------------------------------------------------------------------
// Dataset container
// ---------------------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[4] = {'D', 'S', 'D', 'S'};
constexpr std::uint32_t kDatasetVersion = 1;

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 24));
}

std::uint32_t read_u32le(std::span<const unsigned char> bytes, std::size_t& pos) {
    if (pos + 4 > bytes.size()) throw FormatError("dataset container: truncated header");
    const std::uint32_t v = std::uint32_t(bytes[pos]) | (std::uint32_t(bytes[pos + 1]) << 8) |
                            (std::uint32_t(bytes[pos + 2]) << 16) |
                            (std::uint32_t(bytes[pos + 3]) << 24);
    pos += 4;
    return v;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::vector<unsigned char> out;
    out.reserve(20 + ds.images.size() * 4 + ds.labels.size());
    out.insert(out.end(), kDatasetMagic, kDatasetMagic + 4);
    append_u32(out, kDatasetVersion);
    append_u32(out, static_cast<std::uint32_t>(ds.size()));
    append_u32(out, static_cast<std::uint32_t>(ds.channels()));
    append_u32(out, static_cast<std::uint32_t>(ds.height()));
    append_u32(out, static_cast<std::uint32_t>(ds.width()));
    const std::size_t pixel_bytes = ds.images.size() * sizeof(float);
    const std::size_t base = out.size();
    out.resize(base + pixel_bytes);
    std::memcpy(out.data() + base, ds.images.data(), pixel_bytes);
    for (int l : ds.labels) out.push_back(static_cast<unsigned char>(l));
    write_file_bytes(path, out);
}

Dataset load_dataset(const std::string& path, const std::string& domain_tag) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
        throw FormatError("dataset container: bad magic in " + path);
    }
    std::size_t pos = 4;
    const std::uint32_t version = read_u32le(bytes, pos);
    if (version != kDatasetVersion) {
        throw FormatError("dataset container: unsupported version " + std::to_string(version));
    }
    const std::uint32_t n = read_u32le(bytes, pos);
    const std::uint32_t c = read_u32le(bytes, pos);
    const std::uint32_t h = read_u32le(bytes, pos);
    const std::uint32_t w = read_u32le(bytes, pos);
    const std::size_t count = static_cast<std::size_t>(n) * c * h * w;
    if (bytes.size() < pos + count * 4 + n) {
        throw FormatError("dataset container: truncated at byte " + std::to_string(bytes.size()));
    }
    Dataset ds;
    ds.images = Tensor({static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
                        static_cast<int>(w)});
    std::memcpy(ds.images.data(), bytes.data() + pos, count * 4);
    pos += count * 4;
    ds.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(bytes[pos + i]);
    ds.domain_tag = domain_tag;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const float v = ds.images.data()[i];
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw FormatError("dataset container: pixel outside [0,1] in " + path);
        }
    }
    return ds;
}

std::uint64_t dataset_checksum(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const unsigned char* p, std::size_t len) {
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    const std::uint32_t header[4] = {static_cast<std::uint32_t>(ds.size()),
                                     static_cast<std::uint32_t>(ds.channels()),
                                     static_cast<std::uint32_t>(ds.height()),
                                     static_cast<std::uint32_t>(ds.width())};
    feed(reinterpret_cast<const unsigned char*>(header), sizeof(header));
    feed(reinterpret_cast<const unsigned char*>(ds.images.data()), ds.images.size() * sizeof(float));
    for (int l : ds.labels) {
        const unsigned char b = static_cast<unsigned char>(l);
        feed(&b, 1);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Synthetic digit fixture
// ---------------------------------------------------------------------------

namespace {

struct Pt {
    double x, y;
};

using Stroke = std::vector<Pt>;

// Stroke skeletons in a unit box, y growing downward.
const std::vector<std::vector<Stroke>>& digit_strokes() {
    static const std::vector<std::vector<Stroke>> strokes = [] {
        std::vector<std::vector<Stroke>> d(10);
        auto ellipse = [](double cx, double cy, double rx, double ry, double a0, double a1,
                          int segs) {
            Stroke s;
            for (int i = 0; i <= segs; ++i) {
                const double a = a0 + (a1 - a0) * i / segs;
                s.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
            }
            return s;
        };
        const double pi = 3.14159265358979323846;
        d[0] = {ellipse(0.5, 0.5, 0.22, 0.32, 0.0, 2 * pi, 16)};
        d[1] = {{{0.40, 0.26}, {0.55, 0.12}, {0.55, 0.88}}};
        d[2] = {{{0.28, 0.30}, {0.34, 0.16}, {0.52, 0.12}, {0.68, 0.18}, {0.70, 0.34},
                 {0.55, 0.52}, {0.30, 0.72}, {0.26, 0.86}},
                {{0.26, 0.86}, {0.74, 0.86}}};
        d[3] = {{{0.30, 0.18}, {0.50, 0.12}, {0.68, 0.20}, {0.66, 0.38}, {0.48, 0.47}},
                {{0.48, 0.47}, {0.70, 0.56}, {0.70, 0.76}, {0.52, 0.88}, {0.30, 0.80}}};
        d[4] = {{{0.62, 0.12}, {0.26, 0.62}, {0.78, 0.62}}, {{0.62, 0.12}, {0.62, 0.88}}};
        d[5] = {{{0.70, 0.14}, {0.32, 0.14}, {0.30, 0.45}},
                {{0.30, 0.45}, {0.55, 0.40}, {0.70, 0.52}, {0.68, 0.74}, {0.50, 0.86},
                 {0.28, 0.80}}};
        d[6] = {{{0.64, 0.14}, {0.42, 0.22}, {0.30, 0.45}, {0.30, 0.70}, {0.44, 0.86},
                 {0.62, 0.80}, {0.66, 0.62}, {0.52, 0.52}, {0.32, 0.58}}};
        d[7] = {{{0.26, 0.14}, {0.74, 0.14}, {0.42, 0.88}}};
        d[8] = {ellipse(0.5, 0.30, 0.17, 0.18, 0.0, 2 * pi, 12),
                ellipse(0.5, 0.68, 0.21, 0.20, 0.0, 2 * pi, 12)};
        d[9] = {ellipse(0.52, 0.32, 0.18, 0.20, 0.0, 2 * pi, 12),
                {{0.70, 0.32}, {0.68, 0.60}, {0.58, 0.88}}};
        return d;
    }();
    return strokes;
}

double segment_distance(const Pt& p, const Pt& a, const Pt& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Dataset make_synthetic_digits(int n, std::uint64_t seed, const std::string& domain_tag) {
    if (n < 1) throw InputError("make_synthetic_digits: need at least one sample");
    const int h = 28, w = 28;
    Dataset out;
    out.images = Tensor({n, 1, h, w});
    out.labels.resize(static_cast<std::size_t>(n));
    out.domain_tag = domain_tag;

    for (int i = 0; i < n; ++i) {
        const int label = i % 10;
        out.labels[static_cast<std::size_t>(i)] = label;
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));

        const double angle = rng.uniform(-0.21, 0.21);
        const double sx = rng.uniform(0.78, 1.08);
        const double sy = rng.uniform(0.78, 1.08);
        const double shear = rng.uniform(-0.15, 0.15);
        const double tx = rng.uniform(-0.07, 0.07);
        const double ty = rng.uniform(-0.07, 0.07);
        const double half_width = rng.uniform(0.030, 0.050);
        const double level = rng.uniform(0.75, 1.0);
        const double ca = std::cos(angle), sa = std::sin(angle);

        auto transform = [&](Pt p) {
            double x = (p.x - 0.5) * sx;
            double y = (p.y - 0.5) * sy;
            x += shear * y;
            const double rx = ca * x - sa * y;
            const double ry = sa * x + ca * y;
            return Pt{rx + 0.5 + tx, ry + 0.5 + ty};
        };

        std::vector<Stroke> strokes;
        for (const auto& s : digit_strokes()[static_cast<std::size_t>(label)]) {
            Stroke t;
            t.reserve(s.size());
            for (const auto& p : s) {
                Pt q = transform(p);
                q.x += rng.uniform(-0.018, 0.018);
                q.y += rng.uniform(-0.018, 0.018);
                t.push_back(q);
            }
            strokes.push_back(std::move(t));
        }

        float* img = out.images.data() + static_cast<std::size_t>(i) * h * w;
        const double soft = 0.035;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const Pt p{(x + 0.5) / w, (y + 0.5) / h};
                double best = 1e9;
                for (const auto& s : strokes) {
                    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
                        best = std::min(best, segment_distance(p, s[k], s[k + 1]));
                    }
                }
                const double v = std::clamp((half_width + soft - best) / (2.0 * soft), 0.0, 1.0);
                img[y * w + x] = static_cast<float>(level * v);
            }
        }
    }
    return out;
}

}  // namespace dsprune
