#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsprune/tensor.hpp"

namespace dsprune {

/// A labelled image set for one domain. Pixels are stored [N,c,h,w] in [0,1].
template <class T>
struct DatasetT {
    TensorT<T> images;
    std::vector<int> labels;
    std::string domain_tag;

    int size() const { return images.rank() > 0 ? images.dim(0) : 0; }
    int channels() const { return images.dim(1); }
    int height() const { return images.dim(2); }
    int width() const { return images.dim(3); }
};

using Dataset = DatasetT<float>;

/// Where MNIST-M style background patches come from. ProceduralTexture needs
/// no external files; ImageDirectory reads binary PPM (P6) photos.
struct BackgroundSource {
    enum class Mode { ProceduralTexture, ImageDirectory };
    Mode mode = Mode::ProceduralTexture;
    std::string path;  // ImageDirectory only
};

// ---------------------------------------------------------------------------
// IDX files (big-endian container used by MNIST)
// ---------------------------------------------------------------------------

Tensor parse_idx_images(std::span<const unsigned char> bytes);
std::vector<int> parse_idx_labels(std::span<const unsigned char> bytes);
std::vector<unsigned char> write_idx_images(const Tensor& images);
std::vector<unsigned char> write_idx_labels(const std::vector<int>& labels);

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const unsigned char> bytes);

/// Loads an IDX image/label pair into a dataset.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       const std::string& domain_tag);

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// Replicates a single-channel dataset to 3 channels (values unchanged).
Dataset grayscale_to_rgb(const Dataset& ds);

/// Blends grayscale digits over color background patches: out = |P - D| per
/// channel per pixel. Deterministic for a fixed seed; labels preserved;
/// output domain_tag is "target".
Dataset synth_mnistm(const Dataset& mnist, const BackgroundSource& bg, std::uint64_t seed);

/// First `count` samples starting at `offset` (dataset order).
Dataset take_subset(const Dataset& ds, int offset, int count);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
    Tensor images;
    std::vector<int> labels;
};

/// Serves every sample exactly once per epoch, final partial batch included.
/// With a shuffle seed the permutation is a fixed function of (seed, epoch);
/// without one, dataset order is kept.
class Batcher {
public:
    Batcher(const Dataset& ds, int batch_size, std::optional<std::uint64_t> shuffle_seed);

    int batch_count() const;
    Batch batch(int epoch, int index) const;
    std::vector<int> permutation(int epoch) const;

private:
    const Dataset& ds_;
    int batch_size_;
    std::optional<std::uint64_t> seed_;
};

// ---------------------------------------------------------------------------
// Dataset container (skip re-synthesis between runs)
// Layout: "DSDS" | u32 version | u32 N,c,h,w | f32-LE pixels | u8 labels
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path, const std::string& domain_tag);

/// FNV-1a over header fields, pixel bits and labels; reproducibility audits.
std::uint64_t dataset_checksum(const Dataset& ds);

// ---------------------------------------------------------------------------
// Synthetic digit fixture
// ---------------------------------------------------------------------------

/// Deterministic MNIST-shaped stand-in: 28x28 grayscale stroke-rendered
/// digits with random affine distortion, balanced labels. Used by tests and
/// by the `data.source = synthetic` config mode so the toolkit runs end to
/// end on machines without the real IDX files.
Dataset make_synthetic_digits(int n, std::uint64_t seed, const std::string& domain_tag = "source");

}  // namespace dsprune
