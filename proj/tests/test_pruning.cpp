#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "dsprune/pruning.hpp"
#include "test_util.hpp"

using namespace dsprune;

namespace {

SaliencyScore scores_of(const std::string& layer, std::vector<double> values) {
    SaliencyScore s;
    s.layer_id = layer;
    s.method = ScoreMethod::DSS;
    s.values = std::move(values);
    return s;
}

bool models_param_equal(const Model& a, const Model& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (a.layers[i].has_params() != b.layers[i].has_params()) return false;
        if (!a.layers[i].has_params()) continue;
        if (!bitwise_equal(a.layers[i].weight, b.layers[i].weight)) return false;
        if (!bitwise_equal(a.layers[i].bias, b.layers[i].bias)) return false;
    }
    return true;
}

PrunePlan random_plan(const Model& m, Rng& rng, double lo = 0.1, double hi = 0.6) {
    PrunePlan plan;
    for (const auto& id : m.prunable_layers) {
        SaliencyScore s;
        s.layer_id = id;
        s.values.resize(static_cast<std::size_t>(channel_count(m, id)));
        for (auto& v : s.values) v = rng.next_double();
        plan.entries.push_back(select_bottom_k(s, rng.uniform(lo, hi)));
    }
    return plan;
}

}  // namespace

TEST_SUITE_BEGIN("pruning");

TEST_CASE("select_bottom_k basics") {
    PrunePlanEntry e = select_bottom_k(scores_of("c", {0.9, 0.1, 0.5}), 1.0 / 3.0);
    CHECK(e.kept == std::vector<int>{0, 2});
    CHECK(e.original_channels == 3);

    CHECK(select_bottom_k(scores_of("c", {0.9, 0.1, 0.5}), 0.0).kept == std::vector<int>{0, 1, 2});

    // ties prune the lower index first
    PrunePlanEntry tied = select_bottom_k(scores_of("c", {0.5, 0.5, 0.5, 0.5}), 0.5);
    CHECK(tied.kept == std::vector<int>{2, 3});

    CHECK_THROWS_AS(select_bottom_k(scores_of("c", {0.5}), 1.0), InputError);
    CHECK_THROWS_AS(select_bottom_k(scores_of("c", {0.5}), -0.01), InputError);

    // n = floor(ratio * channels), including the 40% cases of the default net
    SaliencyScore s32, s48;
    s32.layer_id = "conv1";
    s48.layer_id = "conv2";
    Rng rng(2);
    s32.values.resize(32);
    s48.values.resize(48);
    for (auto& v : s32.values) v = rng.next_double();
    for (auto& v : s48.values) v = rng.next_double();
    CHECK(select_bottom_k(s32, 0.4).kept.size() == 32 - 12);
    CHECK(select_bottom_k(s48, 0.4).kept.size() == 48 - 19);

    // extreme ratio still keeps one channel
    CHECK(select_bottom_k(scores_of("c", {0.2, 0.1}), 0.99).kept.size() == 1);
}

TEST_CASE("selection depends only on score order") {
    Rng rng(9);
    SaliencyScore s;
    s.layer_id = "c";
    s.values.resize(24);
    for (auto& v : s.values) v = rng.uniform(-2, 2);
    const auto base = select_bottom_k(s, 0.4).kept;

    auto transformed = [&](auto&& f) {
        SaliencyScore t = s;
        for (auto& v : t.values) v = f(v);
        return select_bottom_k(t, 0.4).kept;
    };
    CHECK(transformed([](double v) { return 2.0 * v + 3.0; }) == base);
    CHECK(transformed([](double v) { return std::exp(v); }) == base);
    CHECK(transformed([](double v) { return v * v * v + 0.1 * v; }) == base);
}

TEST_CASE("apply_prune with an empty plan is the identity on parameters") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 3);
    Model out = apply_prune(m, PrunePlan{});
    CHECK(models_param_equal(m, out));
    CHECK(!out.layer("conv1").weight.same_storage(m.layer("conv1").weight));  // fresh tensors
}

TEST_CASE("apply_prune reshapes this layer and the next") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 3);
    PrunePlan plan;
    PrunePlanEntry e;
    e.layer_id = "conv1";
    e.original_channels = 32;
    e.ratio = 1.0 / 32.0;
    for (int i = 0; i < 32; ++i)
        if (i != 5) e.kept.push_back(i);
    plan.entries.push_back(e);

    Model out = apply_prune(m, plan);
    CHECK(out.layer("conv1").weight.shape() == std::vector<int>{31, 3, 5, 5});
    CHECK(out.layer("conv1").bias.shape() == std::vector<int>{31});
    CHECK(out.layer("conv2").weight.shape() == std::vector<int>{48, 31, 5, 5});
    CHECK(out.layer("fc1").weight.shape() == std::vector<int>{100, 768});  // untouched
    CHECK(m.layer("conv1").weight.shape() == std::vector<int>{32, 3, 5, 5});  // input unchanged

    // kept slices are copied verbatim
    CHECK(out.layer("conv1").bias.data()[5] == m.layer("conv1").bias.data()[6]);

    // pruning conv2 trims fc1 columns in channel-major blocks of 4*4
    PrunePlan plan2;
    SaliencyScore s;
    s.layer_id = "conv2";
    Rng rng(4);
    s.values.resize(48);
    for (auto& v : s.values) v = rng.next_double();
    plan2.entries.push_back(select_bottom_k(s, 0.25));  // prune 12 of 48
    Model out2 = apply_prune(m, plan2);
    CHECK(out2.layer("conv2").weight.shape() == std::vector<int>{36, 32, 5, 5});
    CHECK(out2.layer("fc1").weight.shape() == std::vector<int>{100, 36 * 16});
}

TEST_CASE("apply_prune validates the plan") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 3);
    PrunePlan plan;
    PrunePlanEntry e;
    e.layer_id = "fc1";
    e.kept = {0};
    plan.entries.push_back(e);
    CHECK_THROWS_AS(apply_prune(m, plan), InputError);  // not prunable

    PrunePlan stale;
    PrunePlanEntry e2;
    e2.layer_id = "conv1";
    e2.original_channels = 32;
    for (int i = 8; i < 32; ++i) e2.kept.push_back(i);
    stale.entries.push_back(e2);
    Model pruned = apply_prune(m, stale);
    // applying the same plan again references channels that no longer exist
    CHECK_THROWS_AS(apply_prune(pruned, stale), StateError);
}

TEST_CASE("mask equivalence on random plans") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 6);
    Rng rng(13);
    for (int trial = 0; trial < 6; ++trial) {
        PrunePlan plan = random_plan(m, rng);
        Tensor batch = oracle::random_tensor<float>({2, 3, 28, 28}, rng, 0.0, 1.0);
        Tensor masked = masked_forward(m, plan, batch);
        Tensor pruned = forward(apply_prune(m, plan), batch);
        CHECK(max_rel_err(masked, pruned) <= 1e-6);
    }
}

TEST_CASE("masked_forward with an empty plan is plain forward, bitwise") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 8);
    Rng rng(14);
    Tensor batch = oracle::random_tensor<float>({2, 3, 28, 28}, rng, 0.0, 1.0);
    CHECK(bitwise_equal(masked_forward(m, PrunePlan{}, batch), forward(m, batch)));
}

TEST_CASE("masking a dead channel changes nothing") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 8);
    auto& conv1 = m.layer("conv1");
    const std::size_t slice = conv1.weight.size() / 32;
    std::fill(conv1.weight.data() + 3 * slice, conv1.weight.data() + 4 * slice, 0.0f);
    conv1.bias.data()[3] = -1.0f;  // post-relu map of channel 3 is exactly zero

    PrunePlan plan;
    PrunePlanEntry e;
    e.layer_id = "conv1";
    e.original_channels = 32;
    for (int i = 0; i < 32; ++i)
        if (i != 3) e.kept.push_back(i);
    plan.entries.push_back(e);

    Rng rng(15);
    Tensor batch = oracle::random_tensor<float>({2, 3, 28, 28}, rng, 0.0, 1.0);
    CHECK(bitwise_equal(masked_forward(m, plan, batch), forward(m, batch)));
}

TEST_CASE("monotone parameter shrinkage") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 16);
    Rng rng(16);
    for (int trial = 0; trial < 4; ++trial) {
        PrunePlan plan = random_plan(m, rng, 0.05, 0.7);
        bool any_pruned = false;
        for (const auto& e : plan.entries) any_pruned |= static_cast<int>(e.kept.size()) < e.original_channels;
        Model out = apply_prune(m, plan);
        if (any_pruned) {
            CHECK(out.parameter_count() < m.parameter_count());
        } else {
            CHECK(out.parameter_count() == m.parameter_count());
        }
    }
}

TEST_CASE("sparsity report") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 20);

    // no pruning: sparsity 0
    Model same = apply_prune(m, PrunePlan{});
    SurgeryReport zero = sparsity_report(m, same, PrunePlan{});
    CHECK(zero.achieved_sparsity == 0.0);
    CHECK(zero.params_before == zero.params_after);

    // uniform 40%: aggregate sparsity within floor slack of the request
    PrunePlan plan;
    for (const auto& id : m.prunable_layers) {
        SaliencyScore s = l2_scores(m, id);
        plan.entries.push_back(select_bottom_k(s, 0.4));
    }
    Model pruned = apply_prune(m, plan);
    SurgeryReport r = sparsity_report(m, pruned, plan);
    // conv1 keeps 20 of 32, conv2 keeps 29 of 48
    CHECK(r.achieved_sparsity == doctest::Approx(1.0 - 49.0 / 80.0).epsilon(1e-12));
    CHECK(std::fabs(r.achieved_sparsity - 0.4) <= 1.0 / 32.0);
    REQUIRE(r.layers.size() == 2);
    CHECK(r.layers[0].channels_before == 32);
    CHECK(r.layers[0].channels_after == 20);
    CHECK(r.layers[1].channels_after == 29);

    // parameter counts match the closed-form recomputation from shapes
    const std::int64_t want_after = (20 * 3 * 5 * 5 + 20) + (29 * 20 * 5 * 5 + 29) +
                                    (100 * 29 * 16 + 100) + (100 * 100 + 100) + (10 * 100 + 10);
    CHECK(r.params_after == want_after);
    CHECK(r.params_after == pruned.parameter_count());
}

TEST_CASE("plan text round trip and replay") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 21);
    Rng rng(22);
    PrunePlan plan = random_plan(m, rng);

    const std::string text = plan_to_text(plan);
    CHECK(text.find("conv1: kept=[") == 0);
    CHECK(text.find(" of 32") != std::string::npos);

    PrunePlan back = plan_from_text(text);
    REQUIRE(back.entries.size() == plan.entries.size());
    for (std::size_t i = 0; i < plan.entries.size(); ++i) {
        CHECK(back.entries[i].layer_id == plan.entries[i].layer_id);
        CHECK(back.entries[i].kept == plan.entries[i].kept);
        CHECK(back.entries[i].original_channels == plan.entries[i].original_channels);
    }

    // replaying the parsed plan reproduces the same surgery
    CHECK(models_param_equal(apply_prune(m, plan), apply_prune(m, back)));

    const auto dir = std::filesystem::temp_directory_path() / "dsprune_test_plan";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "p.plan").string();
    save_plan(plan, path);
    PrunePlan fromfile = load_plan(path);
    CHECK(fromfile.entries.size() == plan.entries.size());
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(plan_from_text("conv1: kept=["), FormatError);
    CHECK_THROWS_AS(plan_from_text("conv1: kept=[] of 32"), FormatError);
}

TEST_SUITE_END();
