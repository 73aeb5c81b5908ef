#include "doctest.h"
#include "fixtures.hpp"
#include "skupatch/decoder.hpp"
#include "skupatch/errors.hpp"

using namespace skupatch;
using namespace skupatch::testing;

namespace {

// Every (query, head) samples each token center once, in row-major order.
Tensor<double> all_centers(std::size_t queries, std::size_t heads, GridShape g) {
  std::vector<double> pts;
  for (std::size_t q = 0; q < queries * heads; ++q)
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) {
        pts.push_back((c + 0.5) / g.cols);
        pts.push_back((r + 0.5) / g.rows);
      }
  return Tensor<double>({queries * heads * g.count(), 2}, std::move(pts));
}

TokenSet<double> constant_grid(GridShape g, std::size_t width, double v) {
  return {Tensor<double>({g.count(), width}, v), g};
}

EncoderOutput<double> fake_encoding(const ModelConfig& c, Rng& rng) {
  EncoderOutput<double> e;
  std::size_t side = c.image_grid(), pside = c.patch_grid();
  for (std::size_t i = 0; i < c.layers; ++i) {
    e.image_pyramid.push_back(random_grid_tokens({side, side}, c.width, rng));
    e.patch_levels.push_back(random_grid_tokens({pside, pside}, c.width, rng));
    side /= 2;
    pside /= 2;
  }
  e.objects = {random_const({c.queries, c.width}, rng), std::nullopt};
  return e;
}

}  // namespace

TEST_CASE("bilinear sampling at lattice points and midpoints") {
  Rng rng(1);
  const GridShape g{4, 5};
  const auto grid = random_const({g.count(), 3}, rng);
  // Midpoint between (1,1) and (1,2) and the centre of the 2x2 block (1..2, 1..2).
  const Tensor<double> pts({2, 2}, {2.0 / 5, 1.5 / 4, 2.0 / 5, 2.0 / 4});
  const auto s = bilinear_sample(grid, g, pts);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    CHECK(s.at(0, ch) == doctest::Approx((grid.at(6, ch) + grid.at(7, ch)) / 2).epsilon(1e-12));
    CHECK(s.at(1, ch) == doctest::Approx((grid.at(6, ch) + grid.at(7, ch) + grid.at(11, ch) + grid.at(12, ch)) / 4)
                             .epsilon(1e-12));
  }
}

TEST_CASE("upsampling a constant grid stays constant") {
  const auto up = upsample2x(constant_grid({3, 2}, 4, 1.25));
  CHECK(*up.grid == GridShape{6, 4});
  for (double v : up.tokens.data()) CHECK(v == doctest::Approx(1.25).epsilon(1e-14));
}

TEST_CASE("pyramid fusion with identity bottlenecks sums constant levels") {
  Rng rng(2);
  auto fusion = PyramidFusion<double>::create(3, 8, rng);
  for (auto* list : {&fusion.lateral, &fusion.smooth})
    for (auto& b : *list) {
      for (auto& v : b.expand.weight.mutable_data()) v = 0;
      for (auto& v : b.expand.bias.mutable_data()) v = 0;
    }
  const std::vector<TokenSet<double>> pyr{constant_grid({8, 8}, 8, 1.0), constant_grid({4, 4}, 8, 2.0),
                                          constant_grid({2, 2}, 8, 4.0)};
  const auto fused = pyramid_fuse(pyr, fusion);
  for (double v : fused[0].tokens.data()) CHECK(v == doctest::Approx(7.0).epsilon(1e-12));
  for (double v : fused[1].tokens.data()) CHECK(v == doctest::Approx(6.0).epsilon(1e-12));
  for (double v : fused[2].tokens.data()) CHECK(v == 4.0);
}

TEST_CASE("perturbing the coarsest level reaches the finest fused level") {
  Rng rng(3);
  const auto fusion = PyramidFusion<double>::create(3, 8, rng);
  std::vector<TokenSet<double>> pyr{random_grid_tokens({8, 8}, 8, rng), random_grid_tokens({4, 4}, 8, rng),
                                    random_grid_tokens({2, 2}, 8, rng)};
  const auto base = pyramid_fuse(pyr, fusion);
  std::vector<double> v(pyr[2].tokens.data().begin(), pyr[2].tokens.data().end());
  v[3] += 0.5;
  pyr[2].tokens = Tensor<double>({4, 8}, v);
  const auto moved = pyramid_fuse(pyr, fusion);
  CHECK(max_abs_diff(base[0].tokens, moved[0].tokens) > 1e-6);
  CHECK(max_abs_diff(base[1].tokens, moved[1].tokens) > 1e-6);

  pyr.pop_back();
  CHECK_THROWS_AS(pyramid_fuse(pyr, fusion), DimensionError);
}

TEST_CASE("deformable attention with all token centres equals dense attention") {
  ModelConfig c = tiny_model();
  c.deformable_dot_logits = true;
  const GridShape g{4, 4};
  c.points = g.count();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto def = DeformableAttention<double>::create(c, rng);
    randomize(def, seed + 50, 0.2);
    const auto queries = random_const({5, c.width}, rng, -2, 2);
    const auto tokens = random_grid_tokens(g, c.width, rng);
    const auto pinned = all_centers(5, c.heads, g);
    const auto got = deformable_attention_core(queries, tokens, def, &pinned);

    AttentionParams<double> dense;
    dense.query = def.query_proj;
    dense.key = def.key_proj;
    dense.value = def.value_proj;
    dense.output = def.output;
    dense.norm_query = def.norm_query;
    dense.norm_kv = def.norm_value;
    dense.heads = c.heads;
    const auto expected = cross_attention_core(queries, tokens.tokens, dense);
    CHECK(max_abs_diff(got, expected) < 1e-8);
  }
}

TEST_CASE("sampling weights are distributions per head") {
  ModelConfig c = tiny_model();
  Rng rng(4);
  for (bool dot : {false, true}) {
    c.deformable_dot_logits = dot;
    auto def = DeformableAttention<double>::create(c, rng);
    randomize(def, 5);
    DeformableTrace<double> trace;
    deformable_attention_core(random_const({6, 8}, rng), random_grid_tokens({4, 4}, 8, rng), def, static_cast<const Tensor<double>*>(nullptr), &trace);
    REQUIRE(trace.weights.shape() == Shape{6, c.heads * c.points});
    CHECK(trace.points.rows() == 6 * c.heads * c.points);
    for (std::size_t q = 0; q < 6; ++q)
      for (std::size_t h = 0; h < c.heads; ++h) {
        double acc = 0;
        for (std::size_t j = 0; j < c.points; ++j) acc += trace.weights.at(q, h * c.points + j);
        CHECK(std::abs(acc - 1) < 1e-12);
      }
  }
}

TEST_CASE("initial sampling pattern and weights") {
  const ModelConfig c = tiny_model();
  Rng rng(6);
  const auto def = DeformableAttention<double>::create(c, rng);
  DeformableTrace<double> trace;
  const GridShape g{4, 4};
  const auto q = random_const({2, 8}, rng);
  deformable_attention_core(q, random_grid_tokens(g, 8, rng), def, static_cast<const Tensor<double>*>(nullptr), &trace);
  // Zero weight head: uniform weights. Offsets: j+1 tokens along the head's direction.
  for (double w : trace.weights.data()) CHECK(w == doctest::Approx(1.0 / c.points));
  const double x0 = trace.points.at(0, 0), y0 = trace.points.at(0, 1);
  CHECK(trace.points.at(1, 0) - x0 == doctest::Approx(1.0 / g.cols));
  CHECK(trace.points.at(1, 1) - y0 == doctest::Approx(0.0));
}

TEST_CASE("one sample point or repeated samples reduce to a projected value") {
  ModelConfig c = tiny_model();
  const GridShape g{4, 4};
  Rng rng(7);
  const auto q = random_const({3, 8}, rng);
  const auto tokens = random_grid_tokens(g, 8, rng);
  std::vector<double> loc;
  for (std::size_t i = 0; i < 3 * c.heads; ++i) {
    loc.push_back(rng.uniform(0.1, 0.9));
    loc.push_back(rng.uniform(0.1, 0.9));
  }
  c.points = 1;
  auto one = DeformableAttention<double>::create(c, rng);
  randomize(one, 8);
  const Tensor<double> p1({3 * c.heads, 2}, loc);
  const auto single = deformable_attention_core(q, tokens, one, &p1);

  c.points = 4;
  auto many = DeformableAttention<double>::create(c, rng);
  many.norm_query = one.norm_query;
  many.norm_value = one.norm_value;
  many.value_proj = one.value_proj;
  many.output = one.output;
  randomize(many.weights, 9);
  std::vector<double> rep;
  for (std::size_t i = 0; i < 3 * c.heads; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      rep.push_back(loc[2 * i]);
      rep.push_back(loc[2 * i + 1]);
    }
  const Tensor<double> p4({3 * c.heads * 4, 2}, rep);
  const auto repeated = deformable_attention_core(q, tokens, many, &p4);
  CHECK(max_abs_diff(single, repeated) < 1e-12);

  // Single point: output(value at that location).
  const auto vals = bilinear_sample(one.value_proj(one.norm_value(tokens.tokens)), g, p1);
  std::vector<double> merged(3 * 8);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t h = 0; h < c.heads; ++h)
      for (std::size_t col = h * 4; col < h * 4 + 4; ++col) merged[i * 8 + col] = vals.at(i * c.heads + h, col);
  CHECK(max_abs_diff(single, one.output(Tensor<double>({3, 8}, merged))) < 1e-12);

  CHECK_THROWS_AS(deformable_attention_core(q, tokens, many, &p1), DimensionError);
}

TEST_CASE("gradient through a decoder layer") {
  for (bool dot : {false, true}) {
    ModelConfig c = tiny_model();
    c.deformable_dot_logits = dot;
    Rng rng(10 + dot);
    auto layer = DecoderLayer<double>::create(c, rng);
    randomize(layer, 11);
    NamedParams params{{"objects", random_param({3, 8}, rng)}, {"image", random_param({16, 8}, rng)},
                       {"patch", random_param({4, 8}, rng)}};
    const auto own = collect(layer, "dec");
    params.insert(params.end(), own.begin(), own.end());
    const auto w = random_const({3, 8}, rng);
    const auto g = check_gradients(params, [&] {
      return project(decoder_layer_forward(params[0].second, TokenSet<double>{params[1].second, GridShape{4, 4}},
                                           TokenSet<double>{params[2].second, GridShape{2, 2}}, layer), w);
    }, 3, 12);
    INFO(g.worst);
    CHECK(g.max_rel_error < 1e-5);
  }
}

TEST_CASE("decoder toggles") {
  ModelConfig c = tiny_model();
  Rng rng(13);
  const auto enc = fake_encoding(c, rng);

  SUBCASE("without cross-attention the patch tokens are ignored") {
    c.decoder_cross_attention = false;
    Rng r2(14);
    const auto dec = Decoder<double>::create(c, r2);
    auto other = enc;
    for (auto& p : other.patch_levels) p = random_grid_tokens(*p.grid, c.width, rng);
    CHECK(max_abs_diff(decoder_forward(enc, dec).objects, decoder_forward(other, dec).objects) == 0.0);
  }
  SUBCASE("with cross-attention the patch tokens matter") {
    Rng r2(14);
    auto dec = Decoder<double>::create(c, r2);
    randomize(dec, 15);
    auto other = enc;
    for (auto& p : other.patch_levels) p = random_grid_tokens(*p.grid, c.width, rng);
    CHECK(max_abs_diff(decoder_forward(enc, dec).objects, decoder_forward(other, dec).objects) > 1e-9);
  }
  SUBCASE("without fusion every layer reads the coarsest level") {
    c.fuse = false;
    Rng r2(16);
    const auto dec = Decoder<double>::create(c, r2);
    auto other = enc;
    other.image_pyramid[0] = random_grid_tokens(*enc.image_pyramid[0].grid, c.width, rng);
    CHECK(max_abs_diff(decoder_forward(enc, dec).objects, decoder_forward(other, dec).objects) == 0.0);
    auto copy = dec;
    for (auto& [n, t] : collect(copy, "d")) CHECK(n.find("fusion") == std::string::npos);
  }
  SUBCASE("dense fallback and auxiliary outputs") {
    c.deformable = false;
    Rng r2(17);
    auto dec = Decoder<double>::create(c, r2);
    const auto out = decoder_forward(enc, dec);
    CHECK(out.objects.shape() == Shape{c.queries, c.width});
    CHECK(out.intermediate.size() == c.layers - 1);
    bool dense = false, deform = false;
    for (auto& [n, t] : collect(dec, "d")) {
      dense |= n.find("object_from_image") != std::string::npos;
      deform |= n.find("deformable") != std::string::npos;
    }
    CHECK(dense);
    CHECK_FALSE(deform);
    CHECK_FALSE(out.reference.defined());
  }
  SUBCASE("reference logits reported per layer") {
    Rng r2(18);
    auto dec = Decoder<double>::create(c, r2);
    randomize(dec, 19);
    const auto out = decoder_forward(enc, dec);
    REQUIRE(out.reference.defined());
    CHECK(out.reference.shape() == Shape{c.queries, 2});
    CHECK(out.intermediate_reference.size() == c.layers - 1);
    // Run the layers by hand: the reported reference comes from each layer's
    // input queries, not its output.
    Tensor<double> z = enc.objects.tokens;
    Tensor<double> ref;
    std::vector<TokenSet<double>> fused = pyramid_fuse(enc.image_pyramid, dec.fusion);
    for (std::size_t j = 0; j < c.layers; ++j) {
      const std::size_t level = c.layers - 1 - j;
      z = decoder_layer_forward(z, fused[level], enc.patch_levels[level], dec.layers[j], &ref);
    }
    CHECK(max_abs_diff(ref, out.reference) == 0.0);
    CHECK(max_abs_diff(ref, reference_logits(z, dec.layers.back().deformable)) > 0.0);
  }
}
