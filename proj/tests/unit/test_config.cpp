#include "doctest.h"
#include "skupatch/config.hpp"
#include "skupatch/errors.hpp"

using namespace skupatch;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parsing keys, comments and shared sizes") {
  const auto c = parse_config(
      "# header\n\n"
      "width = 32   # trailing comment\n"
      "image_size=48\n"
      "  fuse = 0\n"
      "patch_fusion = momentum\n"
      "lr = 2.5e-3\n"
      "num_seen_skus = 7\n");
  CHECK(c.model.width == 32);
  CHECK(c.model.image_size == 48);
  CHECK(c.data.image_size == 48);
  CHECK_FALSE(c.model.fuse);
  CHECK(c.model.patch_fusion == PatchFusion::kMomentum);
  CHECK(c.train.lr == 2.5e-3);
  CHECK(c.data.num_seen_skus == 7);
  // Untouched fields keep their defaults.
  CHECK(c.model.heads == ModelConfig{}.heads);
}

TEST_CASE("errors carry the line number") {
  CHECK(error_of("width = 8\nwdith = 8\n").find("line 2") != std::string::npos);
  CHECK(error_of("width = 8\nwdith = 8\n").find("wdith") != std::string::npos);
  CHECK(error_of("\nwidth\n").find("line 2") != std::string::npos);
  CHECK(error_of("width = eight\n").find("line 1") != std::string::npos);
  CHECK(error_of("fuse = maybe\n").find("line 1") != std::string::npos);
  CHECK(error_of("patch_fusion = concat\n").find("line 1") != std::string::npos);
  CHECK(error_of("width = -4\n") != "");
}

TEST_CASE("serialization round trips") {
  RunConfig c;
  c.model.width = 40;
  c.model.heads = 5;
  c.model.deformable = false;
  c.model.patch_momentum = 0.123456789012345;
  c.train.lr = 3e-4;
  c.data.hard_fraction = 0.3;
  const RunConfig back = parse_config(serialize(c));
  CHECK(serialize(back) == serialize(c));
  CHECK(back.model.patch_momentum == c.model.patch_momentum);

  const ModelConfig m = parse_model_config(serialize(c.model));
  CHECK(serialize(m) == serialize(c.model));
  CHECK_THROWS_AS(parse_model_config("lr = 0.1\n"), InputError);
}

TEST_CASE("validation") {
  CHECK_NOTHROW(ModelConfig{}.validate());
  CHECK_NOTHROW(DataConfig{}.validate());
  CHECK_NOTHROW(TrainConfig{}.validate());
  auto bad = [](auto mutate) {
    ModelConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](ModelConfig& c) { c.image_size = 62; });
  bad([](ModelConfig& c) { c.layers = 6; });
  bad([](ModelConfig& c) { c.heads = 3; });
  bad([](ModelConfig& c) { c.mask_coeffs = c.mask_grid * c.mask_grid + 1; });
  bad([](ModelConfig& c) { c.points = 0; });
  bad([](ModelConfig& c) { c.patch_momentum = 1.5; });

  DataConfig d;
  d.patches_per_sku = 11;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  TrainConfig t;
  t.max_train_patches = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);

  // Large query counts stay expressible.
  for (std::size_t k : {100u, 200u, 300u}) {
    const auto c = parse_config("queries = " + std::to_string(k) + "\n");
    CHECK_NOTHROW(c.model.validate());
  }
}

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}
