#include "torch_doctest.hpp"

#include "brainssl/error.hpp"
#include "brainssl/metrics.hpp"
#include "brainssl/segmodel.hpp"
#include "gradcheck.hpp"
#include "model_configs.hpp"

using namespace brainssl;

TEST_CASE("segmentation output shape and range") {
  torch::NoGradGuard g;
  torch::manual_seed(1);
  for (auto [in, out] : std::vector<std::pair<int64_t, int64_t>>{{4, 3}, {1, 1}}) {
    SegModel model(test_configs::micro_encoder(in), test_configs::micro_seg(out));
    auto y = model->forward(torch::randn({2, in, 16, 16, 16}));
    CHECK(y.sizes() == torch::IntArrayRef({2, out, 16, 16, 16}));
    CHECK(y.min().item<double>() > 0.0);
    CHECK(y.max().item<double>() < 1.0);
  }
  // Non-cubic inputs keep their shape as well.
  SegModel model(test_configs::micro_encoder(1), test_configs::micro_seg(2));
  CHECK(model->forward(torch::randn({1, 1, 16, 32, 48})).sizes() == torch::IntArrayRef({1, 2, 16, 32, 48}));
}

TEST_CASE("decoder configuration errors") {
  auto s = test_configs::micro_seg(3);
  s.decoder_channels = {4, 8, 8};
  CHECK_THROWS_AS(SegModel(test_configs::micro_encoder(1), s), ConfigError);
  s = test_configs::micro_seg(0);
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = test_configs::micro_seg(1);
  s.dropout_rate = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("frozen encoder receives no update") {
  torch::manual_seed(2);
  SegModel model(test_configs::micro_encoder(1), test_configs::micro_seg(1));
  model->set_encoder_frozen(true);
  auto x = torch::randn({1, 1, 16, 16, 16});
  auto t = (torch::rand({1, 1, 16, 16, 16}) < 0.3).to(torch::kFloat32);
  std::vector<torch::Tensor> enc_before, dec_before;
  for (auto& p : model->encoder->parameters()) enc_before.push_back(p.detach().clone());
  for (auto& kv : model->named_parameters())
    if (kv.key().rfind("encoder.", 0) != 0) dec_before.push_back(kv.value().detach().clone());
  torch::Tensor out_before;
  {
    torch::NoGradGuard g;
    out_before = model->forward(x);
  }
  torch::optim::AdamW opt(model->parameters(), torch::optim::AdamWOptions(1e-2));
  soft_dice_loss(model->forward(x), t).backward();
  opt.step();

  size_t i = 0;
  bool encoder_same = true;
  for (auto& p : model->encoder->parameters()) encoder_same = encoder_same && torch::equal(p, enc_before[i++]);
  CHECK(encoder_same);
  i = 0;
  bool decoder_moved = false;
  for (auto& kv : model->named_parameters())
    if (kv.key().rfind("encoder.", 0) != 0) decoder_moved = decoder_moved || !torch::equal(kv.value(), dec_before[i++]);
  CHECK(decoder_moved);
  torch::NoGradGuard g;
  CHECK(!torch::equal(model->forward(x), out_before));
}

TEST_CASE("soft dice examples") {
  auto t = torch::zeros({1, 1, 2, 2, 2});
  t.view({-1}).slice(0, 0, 4).fill_(1);
  CHECK(soft_dice_loss(t, t).item<double>() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(soft_dice_loss(1 - t, t).item<double>() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(soft_dice_loss(torch::full_like(t, 0.5), t).item<double>() ==
        doctest::Approx(1.0 - (4.0 + 1e-5) / (8.0 + 1e-5)).epsilon(1e-6));
}

TEST_CASE("soft dice properties") {
  torch::manual_seed(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = torch::rand({2, 3, 6, 6, 6}, torch::kFloat64);
    auto t = (torch::rand({2, 3, 6, 6, 6}) < 0.5).to(torch::kFloat64);
    const double l = soft_dice_loss(p, t).item<double>();
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
  }
  // Complement symmetry for binary masks of half the volume each.
  for (int trial = 0; trial < 20; ++trial) {
    auto t = torch::zeros({64}, torch::kFloat64);
    auto p = torch::zeros({64}, torch::kFloat64);
    t.index_fill_(0, torch::randperm(64).slice(0, 0, 32), 1.0);
    p.index_fill_(0, torch::randperm(64).slice(0, 0, 32), 1.0);
    t = t.view({1, 1, 4, 4, 4});
    p = p.view({1, 1, 4, 4, 4});
    CHECK(soft_dice_loss(p, t).item<double>() ==
          doctest::Approx(soft_dice_loss(1 - p, 1 - t).item<double>()).epsilon(1e-9));
  }
}

TEST_CASE("dice gradients match finite differences") {
  torch::manual_seed(7);
  SegModel model(test_configs::micro_encoder(1), test_configs::micro_seg(2));
  model->to(torch::kFloat64);
  auto x = torch::randn({1, 1, 16, 16, 16}, torch::kFloat64);
  auto t = (torch::rand({1, 2, 16, 16, 16}) < 0.3).to(torch::kFloat64);
  const auto r = testing::grad_check(*model, [&] { return soft_dice_loss(model->forward(x), t); }, 120, 3);
  CHECK(r.failures == 0);
  MESSAGE("worst relative error " << r.worst_rel);
}

TEST_CASE("sliding window positions") {
  CHECK(window_starts(96, 96, 0.5) == std::vector<int64_t>{0});
  CHECK(window_starts(128, 96, 0.5) == std::vector<int64_t>{0, 32});
  CHECK(window_starts(100, 16, 0.0) == std::vector<int64_t>{0, 16, 32, 48, 64, 80, 84});
  CHECK_THROWS_AS(window_starts(10, 16, 0.5), ValidationError);
  CHECK_THROWS_AS(window_starts(32, 16, 1.0), ValidationError);
}

TEST_CASE("sliding window inference") {
  torch::NoGradGuard g;
  int64_t calls = 0;
  auto constant = [&](const torch::Tensor& x) {
    ++calls;
    return torch::full({1, 2, x.size(2), x.size(3), x.size(4)}, 0.25);
  };
  auto vol = torch::randn({1, 128, 128, 128});
  auto out = sliding_window_infer(constant, vol, {96, 96, 96}, 0.5);
  CHECK(calls == 8);
  CHECK(out.sizes() == torch::IntArrayRef({2, 128, 128, 128}));
  CHECK(torch::all(out == 0.25).item<bool>());

  // One window equals a direct forward.
  torch::manual_seed(8);
  SegModel model(test_configs::micro_encoder(1), test_configs::micro_seg(1));
  model->eval();
  auto predict = [&](const torch::Tensor& x) { return model->forward(x); };
  auto v = torch::randn({1, 16, 16, 16});
  CHECK(torch::equal(sliding_window_infer(predict, v, {16, 16, 16}, 0.5), model->forward(v.unsqueeze(0))[0]));

  // Identity predictor: averaging reproduces the input for any roi / overlap,
  // including volumes smaller than the roi.
  auto identity = [](const torch::Tensor& x) { return x.clone(); };
  torch::manual_seed(9);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t d = 5 + trial * 3, h = 9 + trial, w = 20 - trial;
    auto x = torch::randn({1, d, h, w});
    auto y = sliding_window_infer(identity, x, {8, 8, 8}, 0.1 * (trial % 9));
    CHECK(y.sizes() == x.sizes());
    CHECK(torch::allclose(y, x, 1e-5, 1e-5));
  }
}

TEST_CASE("thresholded perfect prediction scores Dice 1") {
  auto labels = (torch::rand({2, 8, 8, 8}) < 0.2).to(torch::kUInt8).contiguous();
  std::vector<uint8_t> lab(labels.data_ptr<uint8_t>(), labels.data_ptr<uint8_t>() + labels.numel());
  SegMask gt({8, 8, 8}, lab, {"a", "b"});
  auto probs = labels.to(torch::kFloat32).contiguous();
  CHECK(soft_dice_loss(probs.unsqueeze(0), probs.unsqueeze(0)).item<double>() < 1e-6);
  const auto m = evaluate_case({probs.data_ptr<float>(), static_cast<size_t>(probs.numel())}, gt);
  CHECK(m.dice_mean == 1.0);
}
