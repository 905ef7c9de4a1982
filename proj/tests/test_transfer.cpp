#include "torch_doctest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "brainssl/error.hpp"
#include "brainssl/transfer.hpp"
#include "model_configs.hpp"
#include "test_util.hpp"

using namespace brainssl;
using brainssl::testing::TempDir;
using brainssl::testing::file_bytes;

namespace {

nlohmann::json config_of(const EncoderConfig& e) { return {{"encoder", {{"variant", e.variant}}}}; }

std::map<std::string, torch::Tensor> params_of(torch::nn::Module& m) {
  std::map<std::string, torch::Tensor> out;
  for (auto& kv : m.named_parameters()) out[kv.key()] = kv.value();
  return out;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir;
  torch::manual_seed(1);
  SslModel model(test_configs::micro_encoder(2), test_configs::micro_heads());
  const auto ck = capture_checkpoint(*model, {{"note", "x"}, {"encoder", {{"variant", "micro"}}}}, 42, 7);
  save_checkpoint(ck, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt");
  CHECK(back == ck);
  CHECK(back.step == 42);
  CHECK(back.seed == 7);
  CHECK(back.config["note"] == "x");
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(file_bytes(dir / "a.ckpt") == file_bytes(dir / "b.ckpt"));

  SslModel other(test_configs::micro_encoder(2), test_configs::micro_heads());
  load_weights(*other, back);
  auto a = params_of(*model);
  for (auto& [name, t] : params_of(*other)) CHECK(torch::equal(t, a[name]));
}

TEST_CASE("checkpoint load errors") {
  TempDir dir;
  SslModel model(test_configs::micro_encoder(1), test_configs::micro_heads());
  const auto ck = capture_checkpoint(*model, {}, 0, 0);
  save_checkpoint(ck, dir / "full.ckpt");
  auto bytes = file_bytes(dir / "full.ckpt");

  for (size_t cut : {size_t{10}, size_t{40}, bytes.size() - 5}) {
    std::ofstream(dir / "cut.ckpt", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(cut));
    try {
      load_checkpoint(dir / "cut.ckpt");
      FAIL("truncated checkpoint accepted");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("corrupt checkpoint archive") != std::string::npos);
    }
  }
  auto bad_version = bytes;
  bad_version[8] = 9;
  std::ofstream(dir / "v.ckpt", std::ios::binary).write(bad_version.data(), static_cast<std::streamsize>(bad_version.size()));
  CHECK_THROWS_AS(load_checkpoint(dir / "v.ckpt"), CheckpointError);
  auto flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x40;
  std::ofstream(dir / "f.ckpt", std::ios::binary).write(flipped.data(), static_cast<std::streamsize>(flipped.size()));
  CHECK_THROWS_AS(load_checkpoint(dir / "f.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);

  auto renamed = ck;
  for (auto& t : renamed.tensors)
    if (t.name == "rotation_head.weight") t.name = "rotation_layer.weight";
  try {
    load_weights(*model, renamed);
    FAIL("renamed layer accepted");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("rotation_head.weight") != std::string::npos);
  }
  SslModel wider(test_configs::micro_encoder(3), test_configs::micro_heads());
  CHECK_THROWS_AS(load_weights(*wider, ck), CheckpointError);
}

TEST_CASE("encoder transfer into the segmentation model") {
  torch::manual_seed(2);
  const auto enc = test_configs::micro_encoder(2);
  SslModel source(enc, test_configs::micro_heads());
  const auto ck = capture_checkpoint(*source, config_of(enc), 10, 1);
  SegModel target(enc, test_configs::micro_seg(3));
  const auto report = transfer_encoder(ck, *target, true);

  auto src = params_of(*source);
  std::set<std::string> expected_skipped;
  for (auto& [name, t] : params_of(*target)) {
    if (name.rfind("encoder.", 0) == 0)
      CHECK(torch::equal(t, src[name]));
    else
      expected_skipped.insert(name);
  }
  CHECK(std::set<std::string>(report.skipped.begin(), report.skipped.end()) == expected_skipped);
  CHECK(report.loaded.size() == params_of(*target->encoder).size());

  // Decoder differs from a fresh build only through initialization.
  torch::manual_seed(3);
  SegModel fresh(enc, test_configs::micro_seg(3));
  CHECK(params_of(*fresh).size() == params_of(*target).size());
}

TEST_CASE("variant and shape mismatches") {
  auto tiny = test_configs::micro_encoder(1);
  auto deeper = tiny;
  deeper.depths = {1, 1, 3, 1};
  deeper.variant = "micro-deep";
  SslModel source(tiny, test_configs::micro_heads());
  const auto ck = capture_checkpoint(*source, config_of(tiny), 0, 0);
  SegModel target(deeper, test_configs::micro_seg(1));
  CHECK_THROWS_AS(transfer_encoder(ck, *target, true), CheckpointError);

  // Without the variant record, strict mode still refuses missing tensors.
  const auto bare = capture_checkpoint(*source, {}, 0, 0);
  CHECK_THROWS_AS(transfer_encoder(bare, *target, true), CheckpointError);
  const auto report = transfer_encoder(bare, *target, false);
  CHECK(std::any_of(report.skipped.begin(), report.skipped.end(),
                    [](const std::string& n) { return n.rfind("encoder.stage2", 0) == 0; }));

  // Channel count mismatch in the patch embedding.
  SegModel wide(test_configs::micro_encoder(4), test_configs::micro_seg(1));
  CHECK_THROWS_AS(transfer_encoder(ck, *wide, true), CheckpointError);
}

TEST_CASE("channel expansion preserves outputs on zero-fed channels") {
  torch::manual_seed(4);
  torch::NoGradGuard g;
  SegModel seg(test_configs::micro_encoder(2), test_configs::micro_seg(3));
  seg->eval();
  auto x = torch::randn({1, 2, 16, 16, 16});
  auto before = seg->forward(x);
  auto old_embed = seg->encoder->patch_embed->weight.clone();
  expand_input_channels(*seg, 4, 99);
  CHECK(seg->in_channels() == 4);
  CHECK(torch::equal(seg->encoder->patch_embed->weight.slice(1, 0, 2), old_embed));
  auto after = seg->forward(torch::cat({x, torch::zeros({1, 2, 16, 16, 16})}, 1));
  CHECK((after - before).abs().max().item<double>() < 1e-6);
  CHECK_THROWS_AS(expand_input_channels(*seg, 4, 1), ValidationError);

  SslModel ssl(test_configs::micro_encoder(2), test_configs::micro_heads());
  ssl->eval();
  auto s0 = ssl->forward(x);
  expand_input_channels(*ssl, 4, 5);
  auto s1 = ssl->forward(torch::cat({x, torch::zeros({1, 2, 16, 16, 16})}, 1));
  CHECK(s1.reconstruction.size(1) == 4);
  CHECK((s1.reconstruction.slice(1, 0, 2) - s0.reconstruction).abs().max().item<double>() < 1e-6);
  CHECK((s1.embedding - s0.embedding).abs().max().item<double>() < 1e-6);
  CHECK((s1.rotation_logits - s0.rotation_logits).abs().max().item<double>() < 1e-6);
}

TEST_CASE("expanded slices follow the fan-in normal") {
  torch::NoGradGuard g;
  auto enc = test_configs::micro_encoder(1);
  enc.embed_dim = 48;
  enc.heads = {3, 6, 12, 24};
  SslModel model(enc, test_configs::micro_heads());
  expand_input_channels(*model, 32, 3);
  auto fresh = model->encoder->patch_embed->weight.slice(1, 1);
  CHECK(fresh.numel() >= 10000);
  const double want = std::sqrt(2.0 / (32.0 * 8.0));
  const double got = fresh.std().item<double>();
  CHECK(std::abs(got - want) / want < 0.1);
  CHECK(std::abs(fresh.mean().item<double>()) < 0.1 * want);

  // Same seed, same slices.
  SslModel again(enc, test_configs::micro_heads());
  expand_input_channels(*again, 32, 3);
  CHECK(torch::equal(again->encoder->patch_embed->weight.slice(1, 1), fresh));
}

TEST_CASE("channel restriction equals zeroing dropped channels") {
  torch::manual_seed(5);
  torch::NoGradGuard g;
  SegModel seg(test_configs::micro_encoder(2), test_configs::micro_seg(1));
  seg->eval();
  auto x = torch::randn({1, 1, 16, 16, 16});
  auto reference = seg->forward(torch::cat({x, torch::zeros_like(x)}, 1));
  auto dup = seg->forward(torch::cat({x, x}, 1));  // same modality routed to both inputs
  CHECK(dup.sizes() == reference.sizes());
  restrict_input_channels(*seg, {0});
  CHECK(seg->in_channels() == 1);
  CHECK((seg->forward(x) - reference).abs().max().item<double>() < 1e-6);

  SegModel keep_all(test_configs::micro_encoder(3), test_configs::micro_seg(1));
  keep_all->eval();
  auto x3 = torch::randn({1, 3, 16, 16, 16});
  auto y3 = keep_all->forward(x3);
  restrict_input_channels(*keep_all, {0, 1, 2});
  CHECK(torch::equal(keep_all->forward(x3), y3));
  CHECK_THROWS_AS(restrict_input_channels(*keep_all, {}), ValidationError);
  CHECK_THROWS_AS(restrict_input_channels(*keep_all, {0, 3}), ValidationError);
  CHECK_THROWS_AS(restrict_input_channels(*keep_all, {1, 1}), ValidationError);

  SslModel ssl(test_configs::micro_encoder(2), test_configs::micro_heads());
  ssl->eval();
  auto full = ssl->forward(torch::cat({torch::zeros_like(x), x}, 1));
  restrict_input_channels(*ssl, {1});
  auto part = ssl->forward(x);
  CHECK(part.reconstruction.size(1) == 1);
  CHECK((part.reconstruction - full.reconstruction.slice(1, 1, 2)).abs().max().item<double>() < 1e-6);
  CHECK((part.embedding - full.embedding).abs().max().item<double>() < 1e-6);
}
