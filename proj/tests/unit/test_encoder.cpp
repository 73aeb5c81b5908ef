#include "doctest.h"
#include "fixtures.hpp"
#include "skupatch/encoder.hpp"
#include "skupatch/errors.hpp"

using namespace skupatch;
using namespace skupatch::testing;

namespace {

std::vector<EncoderLayer<double>> make_layers(const ModelConfig& c, Rng& rng) {
  std::vector<EncoderLayer<double>> layers;
  for (std::size_t i = 0; i < c.layers; ++i) layers.push_back(EncoderLayer<double>::create(c, i + 1 < c.layers, rng));
  return layers;
}

}  // namespace

TEST_CASE("pyramid levels halve the grid") {
  ModelConfig c = tiny_model();
  c.image_size = 64;
  c.layers = 4;
  Rng rng(1);
  const auto layers = make_layers(c, rng);
  const auto out = encoder_forward(random_grid_tokens({16, 16}, 8, rng), random_grid_tokens({8, 8}, 8, rng),
                                   random_const({c.queries, 8}, rng), layers);
  REQUIRE(out.image_pyramid.size() == 4);
  const std::size_t sides[] = {16, 8, 4, 2};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(*out.image_pyramid[i].grid == GridShape{sides[i], sides[i]});
    CHECK(out.image_pyramid[i].count() == sides[i] * sides[i]);
    CHECK(*out.patch_levels[i].grid == GridShape{sides[i] / 2, sides[i] / 2});
  }
  CHECK(out.objects.count() == c.queries);
  CHECK(out.objects.width() == 8);
}

TEST_CASE("grids that cannot be halved are rejected") {
  ModelConfig c = tiny_model();
  Rng rng(2);
  const auto layers = make_layers(c, rng);
  CHECK_THROWS_AS(encoder_forward(random_grid_tokens({6, 6}, 8, rng), random_grid_tokens({4, 4}, 8, rng),
                                  random_const({4, 8}, rng), layers),
                  ConfigError);
}

TEST_CASE("merge is a linear map of 2x2 averages, patch levels are plain averages") {
  const ModelConfig c = tiny_model();
  Rng rng(3);
  const auto layer = EncoderLayer<double>::create(c, true, rng);
  const auto step = encoder_layer_forward(random_grid_tokens({8, 8}, 8, rng), random_grid_tokens({4, 4}, 8, rng),
                                          TokenSet<double>{random_const({4, 8}, rng), std::nullopt}, layer);
  // Oracle: explicit loop pooling then the merge weights.
  const auto& z = step.level.image.tokens;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t col = 0; col < 4; ++col)
      for (std::size_t o = 0; o < 8; ++o) {
        double acc = layer.merge.bias.at(o);
        for (std::size_t i = 0; i < 8; ++i) {
          const double avg = (z.at((2 * r) * 8 + 2 * col, i) + z.at((2 * r) * 8 + 2 * col + 1, i) +
                              z.at((2 * r + 1) * 8 + 2 * col, i) + z.at((2 * r + 1) * 8 + 2 * col + 1, i)) / 4;
          acc += avg * layer.merge.weight.at(i, o);
        }
        CHECK(std::abs(step.next_image.tokens.at(r * 4 + col, o) - acc) < 1e-12);
      }
  const auto& p = step.level.patch.tokens;
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(std::abs(step.next_patch.tokens.at(0, i) - (p.at(0, i) + p.at(1, i) + p.at(4, i) + p.at(5, i)) / 4) < 1e-12);

  const auto last = EncoderLayer<double>::create(c, false, rng);
  const auto final_step = encoder_layer_forward(random_grid_tokens({2, 2}, 8, rng), random_grid_tokens({2, 2}, 8, rng),
                                                TokenSet<double>{random_const({4, 8}, rng), std::nullopt}, last);
  CHECK_FALSE(final_step.next_image.tokens.defined());
}

TEST_CASE("without patch attention the image path is a plain windowed block") {
  ModelConfig c = tiny_model();
  c.encoder_patch_attention = false;
  Rng rng(4);
  const auto layer = EncoderLayer<double>::create(c, true, rng);
  const auto image = random_grid_tokens({8, 8}, 8, rng);
  const TokenSet<double> objects{random_const({4, 8}, rng), std::nullopt};
  const auto a = encoder_layer_forward(image, random_grid_tokens({4, 4}, 8, rng), objects, layer);
  const auto b = encoder_layer_forward(image, random_grid_tokens({4, 4}, 8, rng), objects, layer);
  const auto plain = layer.image_ffn(windowed_self_attention(image, c.window, layer.image_self).tokens);
  CHECK(max_abs_diff(a.level.image.tokens, plain) == 0.0);
  CHECK(max_abs_diff(a.level.image.tokens, b.level.image.tokens) == 0.0);
  CHECK(max_abs_diff(a.level.objects.tokens, b.level.objects.tokens) == 0.0);
  // The patch stream itself still sees the image.
  CHECK(max_abs_diff(a.level.patch.tokens, b.level.patch.tokens) > 0.0);

  std::size_t names = 0;
  EncoderLayer<double> copy = layer;
  copy.visit("l", [&](const std::string& n, Tensor<double>&) { names += n.find("image_from_patch") != std::string::npos; });
  CHECK(names == 0);
}

TEST_CASE("different patches give different pyramids") {
  const ModelConfig c = tiny_model();
  Rng rng(5);
  const auto layers = make_layers(c, rng);
  const auto image = random_grid_tokens({8, 8}, 8, rng);
  const auto queries = random_const({4, 8}, rng);
  const auto base = encoder_forward(image, random_grid_tokens({4, 4}, 8, rng), queries, layers);
  for (int trial = 0; trial < 100; ++trial) {
    const auto other = encoder_forward(image, random_grid_tokens({4, 4}, 8, rng), queries, layers);
    for (std::size_t lvl = 0; lvl < 3; ++lvl)
      CHECK(max_abs_diff(base.image_pyramid[lvl].tokens, other.image_pyramid[lvl].tokens) > 1e-9);
    CHECK(max_abs_diff(base.objects.tokens, other.objects.tokens) > 1e-9);
  }
}

TEST_CASE("object count is preserved through every layer") {
  ModelConfig c = tiny_model();
  for (std::size_t k : {1u, 7u, 30u}) {
    Rng rng(6 + k);
    const auto layers = make_layers(c, rng);
    const auto out = encoder_forward(random_grid_tokens({8, 8}, 8, rng), random_grid_tokens({4, 4}, 8, rng),
                                     random_const({k, 8}, rng), layers);
    CHECK(out.objects.count() == k);
  }
}

TEST_CASE("gradient through one encoder layer") {
  const ModelConfig c = tiny_model();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    auto layer = EncoderLayer<double>::create(c, true, rng);
    NamedParams params{{"image", random_param({16, 8}, rng)}, {"patch", random_param({4, 8}, rng)},
                       {"objects", random_param({3, 8}, rng)}};
    const auto own = collect(layer, "layer");
    params.insert(params.end(), own.begin(), own.end());
    const auto wi = random_const({4, 8}, rng), wp = random_const({1, 8}, rng), wo = random_const({3, 8}, rng);
    const auto g = check_gradients(params, [&] {
      const auto s = encoder_layer_forward(TokenSet<double>{params[0].second, GridShape{4, 4}},
                                           TokenSet<double>{params[1].second, GridShape{2, 2}},
                                           TokenSet<double>{params[2].second, std::nullopt}, layer);
      return add(add(project(s.next_image.tokens, wi), project(s.next_patch.tokens, wp)),
                 project(s.level.objects.tokens, wo));
    }, 3, seed);
    INFO(g.worst);
    CHECK(g.max_rel_error < 1e-5);
  }
}
