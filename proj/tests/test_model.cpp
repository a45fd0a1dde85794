#include "doctest.h"

#include "dsprune/model.hpp"
#include "test_util.hpp"

using namespace dsprune;

TEST_SUITE_BEGIN("model");

TEST_CASE("default convnet shape-checks and emits [n,10] logits") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 1);
    Rng rng(4);
    Tensor batch = oracle::random_tensor<float>({2, 3, 28, 28}, rng, 0.0, 1.0);
    Tensor logits = forward(m, batch);
    CHECK(logits.shape() == std::vector<int>{2, 10});

    const auto shapes = infer_shapes(m);
    CHECK(shapes.front() == std::array<int, 3>{32, 24, 24});
    CHECK(shapes.back() == std::array<int, 3>{1, 1, 10});
}

TEST_CASE("same seed gives bit-identical parameters") {
    Model a = build_convnet<float>({3, 28, 28}, 10, 77);
    Model b = build_convnet<float>({3, 28, 28}, 10, 77);
    Model c = build_convnet<float>({3, 28, 28}, 10, 78);
    REQUIRE(a.layers.size() == b.layers.size());
    bool all_equal = true, any_diff_c = false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (!a.layers[i].has_params()) continue;
        all_equal = all_equal && bitwise_equal(a.layers[i].weight, b.layers[i].weight) &&
                    bitwise_equal(a.layers[i].bias, b.layers[i].bias);
        any_diff_c = any_diff_c || !bitwise_equal(a.layers[i].weight, c.layers[i].weight);
    }
    CHECK(all_equal);
    CHECK(any_diff_c);
}

TEST_CASE("parameter count matches the closed form") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 1);
    // conv1: 32*3*5*5+32, conv2: 48*32*5*5+48, fc1: 100*768+100,
    // fc2: 100*100+100, fc3: 10*100+10
    const std::int64_t expected = (32 * 3 * 5 * 5 + 32) + (48 * 32 * 5 * 5 + 48) +
                                  (100 * 48 * 4 * 4 + 100) + (100 * 100 + 100) + (10 * 100 + 10);
    CHECK(m.parameter_count() == expected);
    CHECK(expected == 128890);
}

TEST_CASE("capture is observation-only and matches composed ops") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 9);
    Rng rng(10);
    Tensor batch = oracle::random_tensor<float>({3, 3, 28, 28}, rng, 0.0, 1.0);

    Tensor plain = forward(m, batch);
    ActivationCapture caps;
    Tensor with_caps = forward(m, batch, {"conv1", "conv2"}, &caps);
    CHECK(bitwise_equal(plain, with_caps));
    REQUIRE(caps.maps.count("conv1") == 1);
    REQUIRE(caps.maps.count("conv2") == 1);

    // captured map equals relu(conv(input)) composed from the ops directly
    const auto& conv1 = m.layer("conv1");
    Tensor direct = relu(conv2d(batch, conv1.weight, conv1.bias, conv1.stride, conv1.padding));
    CHECK(bitwise_equal(caps.maps.at("conv1"), direct));

    // captured shapes match the statically declared ones
    const auto shapes = infer_shapes(m);
    CHECK(caps.maps.at("conv1").shape() == std::vector<int>{3, shapes[0][0], shapes[0][1], shapes[0][2]});

    CHECK_THROWS_AS(forward(m, batch, {"nope"}, &caps), InputError);
}

TEST_CASE("zero image logits: frozen regression and in-process repeatability") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 20260809ULL);
    Tensor zero({1, 3, 28, 28});
    Tensor logits = forward(m, zero);
    Tensor again = forward(m, zero);
    CHECK(bitwise_equal(logits, again));

    const float frozen[10] = {0.02550953f, -0.04685040f, 0.09013142f, -0.03919623f,
                              -0.09100236f, -0.06905605f, 0.04899227f, 0.03062669f,
                              0.03429208f,  -0.08912147f};
    for (int i = 0; i < 10; ++i) {
        CHECK(logits.data()[i] == doctest::Approx(frozen[i]).epsilon(1e-4));
    }
}

TEST_CASE("channel_count") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 1);
    CHECK(channel_count(m, "conv1") == 32);
    CHECK(channel_count(m, "conv2") == 48);
    CHECK_THROWS_AS(channel_count(m, "fc1"), InputError);
    CHECK_THROWS_AS(channel_count(m, "missing"), InputError);
}

TEST_CASE("build_convnet rejects bad inputs") {
    CHECK_THROWS_AS(build_convnet<float>({2, 28, 28}, 10, 1), ConfigError);
    CHECK_THROWS_AS(build_convnet<float>({3, 12, 28}, 10, 1), ConfigError);
    CHECK_THROWS_AS(build_convnet<float>({3, 28, 28}, 1, 1), ConfigError);
}

TEST_CASE("forward validates batch shape") {
    Model m = build_convnet<float>({3, 28, 28}, 10, 1);
    Tensor bad({1, 1, 28, 28});
    CHECK_THROWS_AS(forward(m, bad), ShapeError);
}

TEST_CASE("small double model forward works end to end") {
    ModelT<double> m = testutil::small_model_d(5);
    auto ds = testutil::random_dataset_d(3, 6);
    TensorT<double> logits = forward(m, ds.images);
    CHECK(logits.shape() == std::vector<int>{3, 4});
}

TEST_SUITE_END();
