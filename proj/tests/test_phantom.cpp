#include <doctest.h>

#include <cmath>

#include "brainssl/error.hpp"
#include "brainssl/nifti.hpp"
#include "brainssl/phantom.hpp"
#include "test_util.hpp"

using namespace brainssl;
using brainssl::testing::TempDir;

namespace {

PhantomSpec small_spec(bool diseased, uint64_t seed = 3) {
  PhantomSpec s;
  s.grid = {32, 32, 32};
  s.diseased = diseased;
  s.lesion_radius = {2.0, 4.0};
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("healthy phantom has no mask and zero background") {
  const auto p = generate_phantom(small_spec(false));
  CHECK_FALSE(p.mask.has_value());
  CHECK(p.image.channels() == 2);
  const auto& v = p.image;
  // Corners lie outside the brain ellipsoid.
  for (int64_t c = 0; c < v.channels(); ++c) {
    CHECK(v.at(c, 0, 0, 0) == 0.0f);
    CHECK(v.at(c, 31, 31, 31) == 0.0f);
    CHECK(v.at(c, 0, 16, 16) == 0.0f);
  }
  CHECK(v.at(0, 16, 16, 16) != 0.0f);
}

TEST_CASE("phantom generation is deterministic per seed") {
  const auto a = generate_phantom(small_spec(true, 5));
  const auto b = generate_phantom(small_spec(true, 5));
  CHECK(a.image == b.image);
  CHECK(*a.mask == *b.mask);
  const auto c = generate_phantom(small_spec(true, 6));
  CHECK_FALSE(a.image == c.image);
}

TEST_CASE("diseased phantom: nested nonempty classes, separable lesions") {
  for (uint64_t seed = 0; seed < 12; ++seed) {
    auto spec = small_spec(true, seed);
    spec.n_modalities = 4;
    const auto p = generate_phantom(spec);
    REQUIRE(p.mask.has_value());
    const auto& m = *p.mask;
    REQUIRE(m.classes() == 3);
    const auto c1 = m.channel(0), c2 = m.channel(1), c3 = m.channel(2);
    CHECK(c1.count() > 0);
    CHECK(c3.count() > 0);
    for (size_t i = 0; i < c1.data.size(); ++i) {
      CHECK(c3.data[i] <= c2.data[i]);
      CHECK(c2.data[i] <= c1.data[i]);
    }
    // Foreground (lesion) vs brain background on the first modality.
    double fg = 0, bg = 0;
    int64_t nf = 0, nb = 0;
    const auto ch = p.image.channel(0);
    for (size_t i = 0; i < ch.size(); ++i) {
      if (c1.data[i]) {
        fg += ch[i];
        ++nf;
      } else if (ch[i] != 0.0f) {
        bg += ch[i];
        ++nb;
      }
    }
    CHECK(fg / static_cast<double>(nf) - bg / static_cast<double>(nb) > 3.0 * spec.noise_sigma);
  }
  auto atlas = small_spec(true, 1);
  atlas.n_classes = 1;
  atlas.n_modalities = 1;
  const auto p = generate_phantom(atlas);
  CHECK(p.mask->classes() == 1);
  CHECK(p.mask->channel(0).count() > 0);
}

TEST_CASE("phantom spec validation") {
  auto s = small_spec(true);
  s.grid = {8, 32, 32};
  CHECK_THROWS_AS(generate_phantom(s), ValidationError);
  s = small_spec(true);
  s.lesion_radius = {2.0, 30.0};
  CHECK_THROWS_AS(generate_phantom(s), ValidationError);
  s = small_spec(false);
  s.contrast_coeffs = {{1.0, 0.0}};
  CHECK_THROWS_AS(generate_phantom(s), ValidationError);
}

TEST_CASE("lesion placement failure is a generation error") {
  auto s = small_spec(true);
  s.brain_extent = 0.7;
  s.lesion_radius = {6.5, 6.6};
  CHECK_THROWS_AS(generate_phantom(s), GenerationError);
}

TEST_CASE("generate_dataset writes volumes, masks and a manifest") {
  TempDir dir;
  const auto healthy = generate_dataset(small_spec(false), 8, dir / "h");
  CHECK(healthy.size() == 8);
  int nifti = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "h")) nifti += e.path().string().ends_with(".nii.gz");
  CHECK(nifti == 16);
  CHECK(load_manifest(dir / "h" / "manifest.json") == healthy);

  const auto sick = generate_dataset(small_spec(true), 8, dir / "d");
  nifti = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "d")) nifti += e.path().string().ends_with(".nii.gz");
  CHECK(nifti == 24);
  CHECK(sick[0].has_label);
  const auto mask = load_subject_label(sick[0], 3, dir / "d");
  CHECK(mask == *generate_phantom([] {
          auto s = small_spec(true);
          return s;
        }()).mask);

  generate_dataset(small_spec(true), 8, dir / "again");
  for (const auto& rec : sick)
    for (const auto& [key, file] : rec.paths)
      CHECK(brainssl::testing::file_bytes(dir / "d" / file) == brainssl::testing::file_bytes(dir / "again" / file));

  CHECK_THROWS_AS(generate_dataset(small_spec(false), 0, dir / "z"), ValidationError);
  {
    std::ofstream blocker(dir / "file");
    blocker << "x";
  }
  CHECK_THROWS_AS(generate_dataset(small_spec(false), 1, dir / "file" / "sub"), IoError);
}
