#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "dsprune/pruning.hpp"
#include "dsprune/saliency.hpp"
#include "test_util.hpp"

using namespace dsprune;

namespace {

ActivationStats make_stats(const std::string& layer, int channels, int map_size, Rng& rng) {
    ActivationStats s;
    s.layer_id = layer;
    s.domain_tag = "x";
    s.channels = channels;
    s.map_size = map_size;
    s.sample_count = 1;
    s.mean.resize(static_cast<std::size_t>(channels) * map_size);
    for (auto& v : s.mean) v = rng.uniform(-1.0, 1.0);
    return s;
}

}  // namespace

TEST_SUITE_BEGIN("saliency");

TEST_CASE("gamma normalize-and-flatten") {
    TensorD m({1, 2}, {3.0, 4.0});
    const auto g = gamma(m);
    CHECK(g[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(0.8).epsilon(1e-12));

    TensorD zero({3, 3});
    for (double v : gamma(zero)) CHECK(v == 0.0);

    Rng rng(5);
    for (int trial = 0; trial < 6; ++trial) {
        TensorD x = oracle::random_tensor<double>({4, 5}, rng);
        const auto gx = gamma(x);
        double norm = 0;
        for (double v : gx) norm += v * v;
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));

        // per-sample scale invariance: gamma(c*M) == gamma(M) for c > 0
        TensorD scaled = x.clone();
        for (std::size_t i = 0; i < scaled.size(); ++i) scaled.data()[i] *= 37.5;
        const auto gs = gamma(scaled);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            CHECK(gs[i] == doctest::Approx(gx[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("collect_stats single sample equals gamma exactly") {
    auto model = testutil::small_model_d(1);
    auto ds = testutil::random_dataset_d(1, 2);
    auto stats = collect_stats(model, ds, {"conv1"});
    const ActivationStats& s = stats.at("conv1");
    CHECK(s.sample_count == 1);
    CHECK(s.channels == 4);
    CHECK(s.map_size == 100);

    ActivationCaptureT<double> caps;
    forward(model, ds.images, {"conv1"}, &caps);
    const auto& map = caps.maps.at("conv1");
    for (int c = 0; c < s.channels; ++c) {
        std::vector<double> g(static_cast<std::size_t>(s.map_size));
        gamma(map.data() + static_cast<std::size_t>(c) * s.map_size, s.map_size, g.data());
        for (int i = 0; i < s.map_size; ++i) {
            CHECK(s.row(c)[i] == doctest::Approx(g[static_cast<std::size_t>(i)]).epsilon(1e-15));
        }
    }
}

TEST_CASE("collect_stats is invariant to dataset duplication") {
    auto model = testutil::small_model_d(2);
    auto one = testutil::random_dataset_d(1, 3);
    DatasetT<double> dup;
    dup.images = TensorT<double>({4, 2, 12, 12});
    dup.labels = {one.labels[0], one.labels[0], one.labels[0], one.labels[0]};
    dup.domain_tag = one.domain_tag;
    for (int i = 0; i < 4; ++i) {
        std::copy(one.images.data(), one.images.data() + one.images.size(),
                  dup.images.data() + static_cast<std::size_t>(i) * one.images.size());
    }
    auto s1 = collect_stats(model, one, {"conv1", "conv2"});
    auto s4 = collect_stats(model, dup, {"conv1", "conv2"});
    for (const auto& id : {"conv1", "conv2"}) {
        const auto& a = s1.at(id);
        const auto& b = s4.at(id);
        for (std::size_t i = 0; i < a.mean.size(); ++i) {
            CHECK(b.mean[i] == doctest::Approx(a.mean[i]).epsilon(1e-14));
        }
    }
}

TEST_CASE("collect_stats matches the two-pass oracle") {
    auto model = testutil::small_model_d(4);
    auto ds = testutil::random_dataset_d(8, 9);
    auto stats = collect_stats(model, ds, {"conv1", "conv2"});
    for (const auto& id : {"conv1", "conv2"}) {
        const ActivationStats want = oracle::two_pass_stats(model, ds, id);
        const ActivationStats& got = stats.at(id);
        CHECK(got.sample_count == want.sample_count);
        CHECK(oracle::max_rel_err(got.mean, want.mean) <= 1e-10);
    }
}

TEST_CASE("collect_stats respects the sample cap") {
    auto model = testutil::small_model_d(4);
    auto ds = testutil::random_dataset_d(10, 12);
    DatasetT<double> head;
    head.images = TensorT<double>({4, 2, 12, 12});
    std::copy(ds.images.data(), ds.images.data() + head.images.size(), head.images.data());
    head.labels.assign(ds.labels.begin(), ds.labels.begin() + 4);
    head.domain_tag = ds.domain_tag;

    auto capped = collect_stats(model, ds, {"conv1"}, 4);
    auto direct = collect_stats(model, head, {"conv1"});
    CHECK(capped.at("conv1").sample_count == 4);
    CHECK(oracle::max_rel_err(capped.at("conv1").mean, direct.at("conv1").mean) == 0.0);
}

TEST_CASE("collect_stats input validation") {
    auto model = testutil::small_model_d(1);
    DatasetT<double> empty;
    empty.images = TensorT<double>();
    CHECK_THROWS_AS(collect_stats(model, empty, {"conv1"}), InputError);
    auto ds = testutil::random_dataset_d(2, 2);
    CHECK_THROWS_AS(collect_stats(model, ds, {"fc1"}), InputError);
    CHECK_THROWS_AS(collect_stats(model, ds, {"conv1"}, 0), InputError);
}

TEST_CASE("dss of identical domains is 1 on live channels") {
    auto model = testutil::small_model_d(6);
    auto ds = testutil::random_dataset_d(1, 7);
    auto stats = collect_stats(model, ds, {"conv1"});
    SaliencyScore s = dss_scores(stats.at("conv1"), stats.at("conv1"));
    CHECK(s.method == ScoreMethod::DSS);
    for (int c = 0; c < stats.at("conv1").channels; ++c) {
        double norm = 0;
        for (int i = 0; i < stats.at("conv1").map_size; ++i) {
            norm += stats.at("conv1").row(c)[i] * stats.at("conv1").row(c)[i];
        }
        if (norm > 0) {
            CHECK(s.values[static_cast<std::size_t>(c)] == doctest::Approx(1.0).epsilon(1e-12));
        } else {
            CHECK(s.values[static_cast<std::size_t>(c)] == 0.0);
        }
    }
}

TEST_CASE("dead channel scores 0") {
    auto model = testutil::small_model_d(8);
    // silence conv1 channel 2: zero weights, strongly negative bias
    auto& conv1 = model.layer("conv1");
    const std::size_t slice = conv1.weight.size() / 4;
    std::fill(conv1.weight.data() + 2 * slice, conv1.weight.data() + 3 * slice, 0.0);
    conv1.bias.data()[2] = -5.0;

    auto src = collect_stats(model, testutil::random_dataset_d(4, 21), {"conv1"});
    auto tgt = collect_stats(model, testutil::random_dataset_d(4, 22), {"conv1"});
    SaliencyScore s = dss_scores(src.at("conv1"), tgt.at("conv1"));
    CHECK(s.values[2] == 0.0);
}

TEST_CASE("dss equals the direct dot-product oracle and is symmetric") {
    Rng rng(33);
    ActivationStats a = make_stats("conv9", 5, 12, rng);
    ActivationStats b = make_stats("conv9", 5, 12, rng);
    SaliencyScore s = dss_scores(a, b);
    for (int c = 0; c < 5; ++c) {
        double dot = 0;
        for (int i = 0; i < 12; ++i) dot += a.row(c)[i] * b.row(c)[i];
        CHECK(s.values[static_cast<std::size_t>(c)] == doctest::Approx(dot).epsilon(1e-12));
    }
    SaliencyScore swapped = dss_scores(b, a);
    for (std::size_t c = 0; c < 5; ++c) CHECK(s.values[c] == swapped.values[c]);

    ActivationStats wrong = make_stats("conv9", 6, 12, rng);
    CHECK_THROWS_AS(dss_scores(a, wrong), InputError);
    ActivationStats other = make_stats("other", 5, 12, rng);
    CHECK_THROWS_AS(dss_scores(a, other), InputError);
}

TEST_CASE("dss on post-relu stats lies in [0,1]") {
    auto model = testutil::small_model_d(10);
    auto src = collect_stats(model, testutil::random_dataset_d(6, 31), {"conv1", "conv2"});
    auto tgt = collect_stats(model, testutil::random_dataset_d(6, 32), {"conv1", "conv2"});
    for (const auto& id : {"conv1", "conv2"}) {
        for (double v : dss_scores(src.at(id), tgt.at(id)).values) {
            CHECK(v >= -1e-12);
            CHECK(v <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("multi_domain_dss") {
    Rng rng(44);
    ActivationStats a = make_stats("c", 4, 9, rng);
    ActivationStats b = make_stats("c", 4, 9, rng);
    ActivationStats c = make_stats("c", 4, 9, rng);

    // k = 2 reduces to dss_scores
    SaliencyScore two = multi_domain_dss({&a, &b});
    SaliencyScore direct = dss_scores(a, b);
    for (std::size_t i = 0; i < two.values.size(); ++i) CHECK(two.values[i] == direct.values[i]);

    // k = 3 equals the hand-averaged pairwise scores
    SaliencyScore three = multi_domain_dss({&a, &b, &c});
    SaliencyScore ab = dss_scores(a, b), ac = dss_scores(a, c), bc = dss_scores(b, c);
    for (std::size_t i = 0; i < three.values.size(); ++i) {
        const double want = (ab.values[i] + ac.values[i] + bc.values[i]) / 3.0;
        CHECK(three.values[i] == doctest::Approx(want).epsilon(1e-12));
    }

    // three identical unit-normalized domains give all-ones
    ActivationStats unit = a;
    for (int ch = 0; ch < unit.channels; ++ch) {
        double norm = 0;
        for (int i = 0; i < unit.map_size; ++i) norm += unit.row(ch)[i] * unit.row(ch)[i];
        const double inv = 1.0 / std::sqrt(norm);
        for (int i = 0; i < unit.map_size; ++i) {
            unit.mean[static_cast<std::size_t>(ch) * unit.map_size + i] *= inv;
        }
    }
    for (double v : multi_domain_dss({&unit, &unit, &unit}).values) {
        CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    }

    CHECK_THROWS_AS(multi_domain_dss({&a}), InputError);
}

TEST_CASE("l2 scores") {
    auto model = testutil::small_model_d(12);
    auto& conv1 = model.layer("conv1");
    const std::size_t slice = conv1.weight.size() / 4;
    // channel 0 all-zero; channel 1 only {3,4}
    std::fill(conv1.weight.data(), conv1.weight.data() + slice, 0.0);
    std::fill(conv1.weight.data() + slice, conv1.weight.data() + 2 * slice, 0.0);
    conv1.weight.data()[slice + 0] = 3.0;
    conv1.weight.data()[slice + 1] = 4.0;

    SaliencyScore s = l2_scores(model, "conv1");
    CHECK(s.method == ScoreMethod::L2);
    CHECK(s.values[0] == 0.0);
    CHECK(s.values[1] == doctest::Approx(5.0).epsilon(1e-12));

    // random channel matches the direct formula
    double want = 0;
    const double* w = conv1.weight.data() + 2 * slice;
    for (std::size_t i = 0; i < slice; ++i) want += w[i] * w[i];
    CHECK(s.values[2] == doctest::Approx(std::sqrt(want)).epsilon(1e-12));

    CHECK_THROWS_AS(l2_scores(model, "fc1"), InputError);
}

TEST_CASE("reverse scores flip the selection order") {
    SaliencyScore s;
    s.layer_id = "conv1";
    s.method = ScoreMethod::DSS;
    s.values = {0.1, 0.9};
    SaliencyScore r = reverse_scores(s);
    CHECK(r.method == ScoreMethod::ReverseDSS);

    // bottom-1 of the reversed scores selects the original top channel
    PrunePlanEntry e = select_bottom_k(r, 0.5);
    CHECK(e.kept == std::vector<int>{0});  // channel 1 (original top) pruned

    // reverse(reverse(s)) has the same argsort as s
    SaliencyScore rr = reverse_scores(r);
    Rng rng(3);
    SaliencyScore big;
    big.layer_id = "c";
    big.values.resize(16);
    for (auto& v : big.values) v = rng.uniform(-1, 1);
    big.values[3] = big.values[7];  // tie survives double negation
    SaliencyScore bigrr = reverse_scores(reverse_scores(big));
    CHECK(select_bottom_k(big, 0.5).kept == select_bottom_k(bigrr, 0.5).kept);
    for (std::size_t i = 0; i < rr.values.size(); ++i) CHECK(rr.values[i] == s.values[i]);
}

TEST_CASE("random scores are seed-deterministic") {
    auto model = testutil::small_model_d(14);
    SaliencyScore a = random_scores(model, "conv2", 5);
    SaliencyScore b = random_scores(model, "conv2", 5);
    SaliencyScore c = random_scores(model, "conv2", 6);
    CHECK(a.values.size() == 6);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
    CHECK(random_scores(model, "conv1", 5).values != std::vector<double>(a.values.begin(),
                                                                         a.values.begin() + 4));
}

TEST_CASE("stats container round trip") {
    Rng rng(71);
    std::vector<ActivationStats> stats = {make_stats("conv1", 3, 8, rng),
                                          make_stats("conv2", 5, 4, rng)};
    stats[0].domain_tag = "source";
    stats[1].domain_tag = "target";
    stats[1].sample_count = 123;

    const auto dir = std::filesystem::temp_directory_path() / "dsprune_test_stats";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "s.dsas").string();
    save_stats(stats, path);
    const auto back = load_stats(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].layer_id == "conv1");
    CHECK(back[1].domain_tag == "target");
    CHECK(back[1].sample_count == 123);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t i = 0; i < stats[r].mean.size(); ++i) {
            // rows are stored as float32
            CHECK(back[r].mean[i] == static_cast<double>(static_cast<float>(stats[r].mean[i])));
        }
    }

    auto bytes = read_file_bytes(path);
    bytes.resize(bytes.size() - 6);
    write_file_bytes(path, bytes);
    CHECK_THROWS_AS(load_stats(path), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
