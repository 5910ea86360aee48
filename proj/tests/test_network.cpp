#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "prcnn/network.hpp"
#include "test_util.hpp"

using namespace prcnn;

TEST_CASE("preset shapes for 28x28 and 42x42 inputs") {
    Rng rng(1);
    Network<double> r_net(preset_network("mnist_cnn"), {1, 1, 28, 28}, rng);
    CHECK(r_net.output_dims() == Dims4{1, 10, 1, 1});
    // 28 -conv9-> 20 -pool-> 10 -conv7-> 4 -pool-> 2; dense in = 2*2*64
    const auto& layers = r_net.layers();
    CHECK(layers[0].out_dims.h == 20);
    CHECK(layers[2].out_dims.h == 10);
    CHECK(layers[3].out_dims.h == 4);
    CHECK(layers[5].out_dims.h == 2);
    CHECK(layers[6].dense.in_dim() == 256);

    Rng rng2(1);
    Network<double> t_net(preset_network("mnist_prcnn"), {1, 1, 42, 42}, rng2);
    // 42 -> 34 -> 17 -> 11 (pr on 11x11) -> 5; dense in = 5*5*64
    const auto& tl = t_net.layers();
    CHECK(tl[0].out_dims.h == 34);
    CHECK(tl[2].out_dims.h == 17);
    CHECK(tl[3].out_dims.h == 11);
    CHECK(tl[5].spec.kind == LayerSpec::Kind::pr);
    CHECK(tl[5].out_dims.h == 11);
    CHECK(tl[6].out_dims.h == 5);
    CHECK(tl[7].dense.in_dim() == 1600);
}

TEST_CASE("network spec json round trip and schema errors") {
    NetworkSpec spec = preset_network("mnist_prcnn");
    auto j = network_spec_to_json(spec);
    NetworkSpec back = network_spec_from_json(j);
    CHECK(back.layers.size() == spec.layers.size());
    CHECK(back.layers[5].kind == LayerSpec::Kind::pr);
    CHECK(back.layers[5].pr.grids == spec.layers[5].pr.grids);

    nlohmann::json bad = {{"layers", {{{"type", "conv"}, {"kernel", 3}}}}};
    CHECK_THROWS_WITH_AS(network_spec_from_json(bad), doctest::Contains("out_channels"),
                         ConfigError);

    nlohmann::json bad2 = {{"layers", {{{"type", "warp"}}}}};
    CHECK_THROWS_WITH_AS(network_spec_from_json(bad2), doctest::Contains("type"), ConfigError);

    nlohmann::json bad3 = {{"name", "x"}};
    CHECK_THROWS_WITH_AS(network_spec_from_json(bad3), doctest::Contains("layers"), ConfigError);
}

TEST_CASE("with_patch_reorder inserts after the conv's activation") {
    NetworkSpec base = preset_network("mnist_cnn");
    PatchReorderConfig cfg{{{2, 2}}, EnergyNorm::l1, RemainderPolicy::fixed_margin};
    NetworkSpec pr1 = with_patch_reorder(base, 1, cfg);
    CHECK(pr1.layers[2].kind == LayerSpec::Kind::pr); // conv relu [pr] pool ...
    NetworkSpec pr2 = with_patch_reorder(base, 2, cfg);
    CHECK(pr2.layers[5].kind == LayerSpec::Kind::pr);
    CHECK_THROWS_AS(with_patch_reorder(base, 3, cfg), ConfigError);
}

TEST_CASE("invalid pr placement is rejected at network build") {
    NetworkSpec spec = preset_network("tiny_prcnn");
    Rng rng(2);
    CHECK_THROWS_AS(Network<double>(spec, {1, 1, 2, 2}, rng), ConfigError);
    Rng rng2(2);
    Network<double> ok(spec, {1, 1, 12, 12}, rng2);
    CHECK(ok.output_dims().c == 10);
}

TEST_CASE("checkpoint round trip preserves behaviour bitwise") {
    Rng rng(3);
    NetworkSpec spec = preset_network("tiny_prcnn");
    Network<double> net(spec, {1, 1, 12, 12}, rng);

    Rng xr(4);
    auto x = test::random_tensor({3, 1, 12, 12}, xr);
    auto before = net.forward(x, false);

    const std::string dir =
        (std::filesystem::temp_directory_path() / "prcnn_ckpt_test").string();
    std::filesystem::remove_all(dir);
    save_checkpoint(net, dir);
    CHECK(checkpoint_dtype(dir) == "f64");
    auto loaded = load_checkpoint<double>(dir);
    auto after = loaded.forward(x, false);
    CHECK(std::memcmp(before.data.data(), after.data.data(),
                      before.size() * sizeof(double)) == 0);

    CHECK_THROWS_AS(load_checkpoint<float>(dir), DataError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("float networks build and run") {
    Rng rng(5);
    Network<float> net(preset_network("tiny_cnn"), {1, 1, 12, 12}, rng);
    Tensor4f x({2, 1, 12, 12});
    for (auto& v : x.data) v = 0.5f;
    auto y = net.forward(x, false);
    CHECK(y.dims == Dims4{2, 10, 1, 1});
}
