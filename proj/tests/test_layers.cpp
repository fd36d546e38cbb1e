#include <catch2/catch_amalgamated.hpp>

#include "oracle_helpers.hpp"
#include "vf/gradcheck.hpp"
#include "vf/nn.hpp"

using vf::Mode;
using vf::Tensor;

namespace {

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> registry_params(vf::ParamRegistry<T>& reg) {
  return reg.trainable();
}

// gradcheck wants every parameter at a generic point; re-randomize the
// zero-initialized output projections too.
template <typename T>
void randomize_registry(vf::ParamRegistry<T>& reg, vf::Rng& rng, double scale = 0.15) {
  for (auto& e : reg.entries)
    if (e.trainable)
      for (T& v : e.tensor->raw()) v = static_cast<T>(rng.uniform(-scale, scale));
}

}  // namespace

TEST_CASE("conv2plus1d factorization arithmetic") {
  SECTION("worked example: t=3 d=3 64->64") {
    REQUIRE(vf::conv2plus1d_mid_channels(3, 3, 64, 64) == 144);
    vf::Conv2Plus1d<double> conv(64, 64, 3, 3, {1, 1, 1}, {1, 1, 1});
    REQUIRE(conv.mid_channels() == 144);
    vf::ParamRegistry<double> reg;
    conv.register_params("conv", reg);
    // 9*64*144 spatial + 3*144*64 temporal = full-3D 3*9*64*64 exactly
    REQUIRE(reg.trainable_count() == 82944 + 27648);
    REQUIRE(reg.trainable_count() == 110592);
  }
  SECTION("parameter parity within 1% for every R(2+1)D-18 block shape") {
    for (double wm : {1.0, 0.5, 0.25, 0.125}) {
      std::vector<std::pair<int64_t, int64_t>> shapes;
      auto w = [&](int s) {
        return static_cast<int64_t>(std::array<int64_t, 4>{64, 128, 256, 512}[s] * wm);
      };
      shapes.push_back({3, w(0)});  // stem
      for (int s = 0; s < 4; ++s) {
        shapes.push_back({s == 0 ? w(0) : w(s - 1), w(s)});
        shapes.push_back({w(s), w(s)});
      }
      for (auto [cin, cout] : shapes) {
        vf::Conv2Plus1d<double> conv(cin, cout, 3, 3, {1, 1, 1}, {1, 1, 1});
        vf::ParamRegistry<double> reg;
        conv.register_params("c", reg);
        double full3d = 3.0 * 9.0 * cin * cout;
        double rel = std::abs(reg.trainable_count() - full3d) / full3d;
        INFO("cin=" << cin << " cout=" << cout << " wm=" << wm);
        REQUIRE(rel <= 0.01);
      }
    }
  }
  SECTION("degenerate channel counts are rejected") {
    // t*d^2*cin*cout < d^2*cin + t*cout forces M = 0
    REQUIRE_THROWS_AS(vf::conv2plus1d_mid_channels(3, 3, 1, 0), vf::ConfigError);
  }
  SECTION("even extents are rejected") {
    REQUIRE_THROWS_AS(vf::Conv2Plus1d<double>(4, 4, 2, 3, {1, 1, 1}, {1, 1, 1}), vf::ConfigError);
  }
}

TEST_CASE("conv2plus1d geometry matches the full 3-D convolution") {
  vf::Rng rng(5);
  SECTION("same-padding shape preservation") {
    vf::Conv2Plus1d<float> conv(3, 8, 3, 3, {1, 1, 1}, {1, 1, 1});
    conv.init(rng);
    Tensor<float> x({1, 3, 6, 8, 8});
    oracle::fill_uniform(x, rng);
    auto y = conv.forward(x);
    REQUIRE(y.shape() == vf::Shape{1, 8, 6, 8, 8});
  }
  SECTION("50 random configurations agree with the 3-D output shape") {
    for (int trial = 0; trial < 50; ++trial) {
      int64_t t = 1 + 2 * rng.below(2);   // 1 or 3
      int64_t d = 1 + 2 * rng.below(2);
      int64_t cin = 1 + rng.below(5), cout = 1 + rng.below(6);
      std::array<int64_t, 3> stride{1 + static_cast<int64_t>(rng.below(2)),
                                    1 + static_cast<int64_t>(rng.below(2)),
                                    1 + static_cast<int64_t>(rng.below(2))};
      std::array<int64_t, 3> pad{t / 2, d / 2, d / 2};
      int64_t Ti = t + rng.below(6), Hi = d + rng.below(7), Wi = d + rng.below(7);
      vf::Conv2Plus1d<float> conv(cin, cout, t, d, stride, pad);
      conv.init(rng);
      Tensor<float> x({1, cin, Ti, Hi, Wi});
      oracle::fill_uniform(x, rng);
      Tensor<float> w3({cout, cin, t, d, d});
      oracle::fill_uniform(w3, rng);
      auto ours = conv.forward(x);
      auto ref = oracle::conv3d_reference(x, w3, stride, pad);
      INFO("t=" << t << " d=" << d << " stride=" << stride[0] << stride[1] << stride[2]);
      REQUIRE(ours.shape() == ref.shape());
    }
  }
  SECTION("identity-like kernels reproduce the delta kernel's 3-D convolution") {
    // spatial stage: center tap copies channel i -> i; temporal stage: center
    // tap copies back; with the nonlinearity disabled the composition equals
    // a full 3-D convolution with a centered delta kernel.
    const int64_t C = 2;
    vf::Conv2Plus1d<double> conv(C, C, 3, 3, {1, 1, 1}, {1, 1, 1});
    conv.set_nonlinearity(false);
    int64_t M = conv.mid_channels();
    REQUIRE(M >= C);
    auto ws = conv.spatial().weight().raw();
    std::fill(ws.begin(), ws.end(), 0.0);
    for (int64_t c = 0; c < C; ++c)
      ws[((c * C + c) * 1 + 0) * 9 + 4] = 1.0;  // [m=c, ci=c, 0, 1, 1]
    auto wt = conv.temporal().weight().raw();
    std::fill(wt.begin(), wt.end(), 0.0);
    for (int64_t c = 0; c < C; ++c)
      wt[(c * M + c) * 3 + 1] = 1.0;  // [co=c, m=c, t=1, 0, 0]

    vf::Rng rng2(9);
    Tensor<double> x({1, C, 4, 4, 4});
    oracle::fill_uniform(x, rng2);
    Tensor<double> delta({C, C, 3, 3, 3});
    auto dv = delta.raw();
    for (int64_t c = 0; c < C; ++c) dv[((c * C + c) * 3 + 1) * 9 + 4] = 1.0;

    auto ours = conv.forward(x);
    auto ref = oracle::conv3d_reference(x, delta, {1, 1, 1}, {1, 1, 1});
    REQUIRE(ours.shape() == ref.shape());
    for (int64_t i = 0; i < ours.numel(); ++i)
      REQUIRE(ours.values()[i] == Catch::Approx(ref.values()[i]).margin(1e-12));
    // and the delta kernel preserves an impulse
    Tensor<double> impulse({1, C, 4, 4, 4});
    impulse.raw()[1 * 16 + 1 * 4 + 1] = 1.0;
    auto echoed = conv.forward(impulse);
    REQUIRE(echoed.values()[1 * 16 + 1 * 4 + 1] == Catch::Approx(1.0));
    REQUIRE(vf::sum_all(echoed).item() == Catch::Approx(1.0));
  }
}

TEST_CASE("conv3d matches the padding-based reference on random cases") {
  vf::Rng rng(31);
  for (int trial = 0; trial < 8; ++trial) {
    int64_t cin = 1 + rng.below(3), cout = 1 + rng.below(3);
    int64_t kt = 1 + 2 * rng.below(2), kh = 1 + 2 * rng.below(2), kw = 1 + 2 * rng.below(2);
    std::array<int64_t, 3> stride{1 + static_cast<int64_t>(rng.below(2)), 1, 1};
    std::array<int64_t, 3> pad{kt / 2, kh / 2, kw / 2};
    Tensor<double> x({2, cin, kt + 2, kh + 3, kw + 3});
    Tensor<double> w({cout, cin, kt, kh, kw});
    oracle::fill_uniform(x, rng);
    oracle::fill_uniform(w, rng);
    auto ours = vf::conv3d(x, w, nullptr, {stride, pad});
    auto ref = oracle::conv3d_reference(x, w, stride, pad);
    REQUIRE(ours.shape() == ref.shape());
    for (int64_t i = 0; i < ours.numel(); ++i)
      REQUIRE(ours.values()[i] == Catch::Approx(ref.values()[i]).margin(1e-10));
  }
}

TEST_CASE("conv gradients pass the finite-difference oracle") {
  vf::Rng rng(37);
  SECTION("conv3d with bias and stride") {
    Tensor<double> x({1, 2, 3, 4, 4});
    Tensor<double> w({2, 2, 3, 3, 3});
    Tensor<double> b({2});
    oracle::fill_uniform(x, rng);
    oracle::fill_uniform(w, rng);
    oracle::fill_uniform(b, rng);
    for (auto* t : {&x, &w, &b}) t->set_requires_grad(true);
    auto program = [&] {
      auto y = vf::conv3d(x, w, &b, {{1, 2, 1}, {1, 1, 1}});
      return vf::sum_all(vf::mul(y, y));
    };
    auto report = vf::grad_check<double>(program, {{"x", &x}, {"w", &w}, {"b", &b}}, 1e-6, 1e-5);
    INFO("max rel err " << report.max_rel_err);
    REQUIRE(report.pass);
  }
  SECTION("conv2plus1d end to end") {
    vf::Conv2Plus1d<double> conv(2, 3, 3, 3, {1, 1, 1}, {1, 1, 1});
    conv.init(rng);
    Tensor<double> x({1, 2, 3, 4, 4});
    oracle::fill_uniform(x, rng);
    x.set_requires_grad(true);
    vf::ParamRegistry<double> reg;
    conv.register_params("conv", reg);
    auto params = registry_params(reg);
    params.emplace_back("x", &x);
    auto program = [&] {
      auto y = conv.forward(x);
      return vf::sum_all(vf::mul(y, y));
    };
    auto report = vf::grad_check<double>(program, params, 1e-6, 1e-5);
    INFO("max rel err " << report.max_rel_err);
    REQUIRE(report.pass);
  }
}

TEST_CASE("multi-head attention") {
  vf::AttentionConfig cfg{192, 3, 64};
  SECTION("single token: attention weight is exactly one") {
    vf::MultiHeadAttention<double> mha(cfg);
    vf::Rng rng(41);
    mha.init(rng, /*zero_out_proj=*/false);
    Tensor<double> x({2, 1, 192});
    oracle::fill_uniform(x, rng);
    Tensor<double> attn;
    auto y = mha.forward(x, &attn);
    REQUIRE(attn.shape() == vf::Shape{6, 1, 1});
    for (double a : attn.values()) REQUIRE(a == 1.0);
    // the only token attends to itself: output == wo(wv(x))
    auto direct = mha.output_proj().forward(mha.value_proj().forward(x));
    for (int64_t i = 0; i < y.numel(); ++i)
      REQUIRE(y.values()[i] == Catch::Approx(direct.values()[i]).margin(1e-12));
  }
  SECTION("identical tokens give identical outputs") {
    vf::MultiHeadAttention<double> mha(cfg);
    vf::Rng rng(43);
    mha.init(rng, false);
    Tensor<double> x({1, 5, 192});
    Tensor<double> token({192});
    oracle::fill_uniform(token, rng);
    for (int64_t s = 0; s < 5; ++s)
      std::copy(token.values().begin(), token.values().end(), x.raw().begin() + s * 192);
    auto y = mha.forward(x);
    for (int64_t s = 1; s < 5; ++s)
      for (int64_t i = 0; i < 192; ++i)
        REQUIRE(y.values()[s * 192 + i] == Catch::Approx(y.values()[i]).margin(1e-12));
  }
  SECTION("attention rows sum to one") {
    vf::MultiHeadAttention<double> mha(cfg);
    vf::Rng rng(47);
    mha.init(rng, false);
    Tensor<double> x({2, 7, 192});
    oracle::fill_uniform(x, rng);
    Tensor<double> attn;
    mha.forward(x, &attn);
    for (int64_t row = 0; row < 2 * 3 * 7; ++row) {
      double s = 0;
      for (int64_t j = 0; j < 7; ++j) s += attn.values()[row * 7 + j];
      REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
    }
  }
  SECTION("gradient check at the configured geometry") {
    vf::MultiHeadAttention<double> mha(cfg);
    vf::Rng rng(53);
    mha.init(rng, false);
    vf::ParamRegistry<double> reg;
    mha.register_params("mha", reg);
    randomize_registry(reg, rng, 0.1);
    Tensor<double> x({2, 5, 192});
    oracle::fill_uniform(x, rng);
    x.set_requires_grad(true);
    auto params = registry_params(reg);
    params.emplace_back("x", &x);
    auto program = [&] {
      auto y = mha.forward(x);
      return vf::sum_all(vf::mul(y, y));
    };
    // sampled positions per parameter keep this fast; every tensor is touched
    auto report = vf::grad_check<double>(program, params, 1e-5, 1e-4, 4);
    INFO("max rel err " << report.max_rel_err);
    REQUIRE(report.pass);
  }
  SECTION("wrong sequence width is a dimension error") {
    vf::MultiHeadAttention<double> mha(cfg);
    REQUIRE_THROWS_AS(mha.forward(Tensor<double>({1, 4, 100})), vf::DimensionError);
  }
}

TEST_CASE("transformer block") {
  vf::AttentionConfig cfg{32, 2, 16};
  vf::Rng rng(59);
  SECTION("freshly initialized block is the identity") {
    vf::TransformerBlock<double> block(cfg);
    block.init(rng);
    Tensor<double> x({2, 4, 32});
    oracle::fill_uniform(x, rng);
    auto y = block.forward(x);
    for (int64_t i = 0; i < x.numel(); ++i) REQUIRE(y.values()[i] == x.values()[i]);
  }
  SECTION("shape preserved across sizes") {
    vf::TransformerBlock<double> block(cfg);
    block.init(rng);
    for (auto [n, s] : {std::pair<int64_t, int64_t>{1, 1}, {2, 3}, {3, 9}}) {
      Tensor<double> x({n, s, 32});
      oracle::fill_uniform(x, rng);
      REQUIRE(block.forward(x).shape() == x.shape());
    }
  }
  SECTION("depth-4 stack parameter count matches the closed form") {
    vf::AttentionConfig paper_cfg{192, 3, 64};
    vf::ParamRegistry<double> reg;
    std::vector<vf::TransformerBlock<double>> blocks;
    for (int i = 0; i < 4; ++i) blocks.emplace_back(paper_cfg);
    for (int i = 0; i < 4; ++i) blocks[i].register_params("b" + std::to_string(i), reg);
    REQUIRE(reg.trainable_count() == 4 * oracle::transformer_block_params(192, 3, 64));
  }
  SECTION("gradient check") {
    vf::TransformerBlock<double> block(cfg);
    block.init(rng);
    vf::ParamRegistry<double> reg;
    block.register_params("block", reg);
    randomize_registry(reg, rng, 0.1);
    Tensor<double> x({1, 3, 32});
    oracle::fill_uniform(x, rng);
    x.set_requires_grad(true);
    auto params = registry_params(reg);
    params.emplace_back("x", &x);
    auto program = [&] {
      auto y = block.forward(x);
      return vf::sum_all(vf::mul(y, y));
    };
    auto report = vf::grad_check<double>(program, params, 1e-5, 1e-4, 6);
    INFO("max rel err " << report.max_rel_err);
    REQUIRE(report.pass);
  }
}

TEST_CASE("patch embedding") {
  SECTION("64x64 with patch 16 gives 16 tokens per frame") {
    vf::PatchEmbed<double> embed(3, 64, 64, 16, 48);
    REQUIRE(embed.tokens_per_frame() == 16);
  }
  SECTION("indivisible patch size names the geometry") {
    REQUIRE_THROWS_WITH(vf::PatchEmbed<double>(3, 64, 64, 15, 48),
                        Catch::Matchers::ContainsSubstring("15") &&
                            Catch::Matchers::ContainsSubstring("64"));
  }
  SECTION("constant frame yields identical pre-positional tokens") {
    vf::PatchEmbed<double> embed(3, 16, 16, 8, 24);
    vf::Rng rng(61);
    embed.init(rng);
    Tensor<double> frames = Tensor<double>::full({1, 1, 3, 16, 16}, 0.37);
    auto tokens = embed.forward(frames);  // [1,1,4,24]
    const auto& pos = embed.positions();
    // subtracting each token's positional row leaves one shared vector
    std::vector<double> base(24);
    for (int64_t i = 0; i < 24; ++i) base[i] = tokens.values()[i] - pos.values()[i];
    for (int64_t s = 1; s < 4; ++s)
      for (int64_t i = 0; i < 24; ++i)
        REQUIRE(tokens.values()[s * 24 + i] - pos.values()[s * 24 + i] ==
                Catch::Approx(base[i]).margin(1e-12));
    // while the positional term tells them apart
    bool any_diff = false;
    for (int64_t i = 0; i < 24; ++i)
      if (tokens.values()[i] != tokens.values()[24 + i]) any_diff = true;
    REQUIRE(any_diff);
  }
  SECTION("gradient check") {
    vf::PatchEmbed<double> embed(2, 8, 8, 4, 12);
    vf::Rng rng(67);
    embed.init(rng);
    vf::ParamRegistry<double> reg;
    embed.register_params("embed", reg);
    Tensor<double> frames({1, 2, 2, 8, 8});
    oracle::fill_uniform(frames, rng);
    frames.set_requires_grad(true);
    auto params = registry_params(reg);
    params.emplace_back("frames", &frames);
    auto program = [&] {
      auto y = embed.forward(frames);
      return vf::sum_all(vf::mul(y, y));
    };
    auto report = vf::grad_check<double>(program, params, 1e-6, 1e-5, 8);
    REQUIRE(report.pass);
  }
}

TEST_CASE("dropout") {
  vf::Rng rng(71);
  Tensor<double> x = Tensor<double>::full({1000}, 1.0);
  SECTION("p = 0 is the identity in any mode") {
    vf::Dropout<double> drop(0.0);
    auto y = drop.forward(x, Mode::Training, rng);
    REQUIRE(y.storage().get() == x.storage().get());
  }
  SECTION("evaluation mode is bit-identical to the input") {
    vf::Dropout<double> drop(0.2);
    auto y = drop.forward(x, Mode::Evaluation, rng);
    REQUIRE(y.storage().get() == x.storage().get());
  }
  SECTION("training mode preserves the mean within 0.5% at n = 1e6") {
    vf::Dropout<double> drop(0.2);
    double sum = 0;
    int64_t n = 0;
    for (int rep = 0; rep < 1000; ++rep) {
      auto y = drop.forward(x, Mode::Training, rng);
      for (double v : y.values()) sum += v;
      n += y.numel();
    }
    double mean = sum / n;
    REQUIRE(mean >= 0.995);
    REQUIRE(mean <= 1.005);
  }
  SECTION("p >= 1 is a configuration error") {
    REQUIRE_THROWS_AS(vf::Dropout<double>(1.0), vf::ConfigError);
    REQUIRE_THROWS_AS(vf::dropout(x, 1.2, true, rng), vf::ConfigError);
  }
  SECTION("gradient flows through the mask") {
    Tensor<double> v({64});
    oracle::fill_uniform(v, rng);
    v.set_requires_grad(true);
    vf::Rng fixed(123);
    // pin the seed so the program is deterministic under grad_check
    auto program = [&] {
      vf::Rng local(123);
      auto y = vf::dropout(v, 0.3, true, local);
      return vf::sum_all(vf::mul(y, y));
    };
    auto report = vf::grad_check<double>(program, {{"v", &v}}, 1e-6, 1e-6);
    REQUIRE(report.pass);
  }
}

TEST_CASE("batch norm") {
  vf::Rng rng(73);
  SECTION("evaluation mode is deterministic and batch-independent") {
    vf::BatchNorm<double> bn(3);
    Tensor<double> one({1, 3, 2, 2, 2});
    oracle::fill_uniform(one, rng);
    // run a few training steps so running stats move off their defaults
    for (int i = 0; i < 3; ++i) {
      Tensor<double> batch({4, 3, 2, 2, 2});
      oracle::fill_uniform(batch, rng);
      bn.forward(batch, Mode::Training);
    }
    auto alone = bn.forward(one, Mode::Evaluation);
    Tensor<double> padded({2, 3, 2, 2, 2});
    std::copy(one.values().begin(), one.values().end(), padded.raw().begin());
    oracle::fill_uniform(padded, rng);  // second sample arbitrary
    std::copy(one.values().begin(), one.values().end(), padded.raw().begin());
    auto batched = bn.forward(padded, Mode::Evaluation);
    for (int64_t i = 0; i < one.numel(); ++i)
      REQUIRE(alone.values()[i] == batched.values()[i]);
    auto again = bn.forward(one, Mode::Evaluation);
    for (int64_t i = 0; i < one.numel(); ++i) REQUIRE(alone.values()[i] == again.values()[i]);
  }
  SECTION("constant input normalizes to zero before scale/shift") {
    vf::BatchNorm<double> bn(2);
    Tensor<double> x = Tensor<double>::full({3, 2, 2, 2, 2}, 0.7);
    auto y = bn.forward(x, Mode::Training);
    for (double v : y.values()) REQUIRE(v == Catch::Approx(0.0).margin(1e-9));
  }
  SECTION("training-mode gradient check") {
    vf::BatchNorm<double> bn(2);
    Tensor<double> x({3, 2, 2, 2, 2});
    oracle::fill_uniform(x, rng);
    x.set_requires_grad(true);
    vf::ParamRegistry<double> reg;
    bn.register_params("bn", reg);
    auto params = registry_params(reg);
    params.emplace_back("x", &x);
    // freeze running-stat updates out of the picture: stats are recomputed
    // identically on every call, so the program is deterministic
    auto program = [&] {
      auto y = bn.forward(x, Mode::Training);
      return vf::sum_all(vf::mul(y, y));
    };
    auto report = vf::grad_check<double>(program, params, 1e-6, 1e-5);
    INFO("max rel err " << report.max_rel_err);
    REQUIRE(report.pass);
  }
}

TEST_CASE("linear layer") {
  SECTION("parameter count: 192 -> 1 with bias is 193") {
    vf::Linear<double> lin(192, 1);
    vf::ParamRegistry<double> reg;
    lin.register_params("head", reg);
    REQUIRE(reg.trainable_count() == 193);
  }
  SECTION("gradient check over a rank-3 input") {
    vf::Rng rng(79);
    vf::Linear<double> lin(6, 4);
    lin.init(rng);
    vf::ParamRegistry<double> reg;
    lin.register_params("lin", reg);
    Tensor<double> x({2, 3, 6});
    oracle::fill_uniform(x, rng);
    x.set_requires_grad(true);
    auto params = registry_params(reg);
    params.emplace_back("x", &x);
    auto program = [&] {
      auto y = lin.forward(x);
      return vf::sum_all(vf::mul(y, y));
    };
    REQUIRE(vf::grad_check<double>(program, params, 1e-6, 1e-6).pass);
  }
}

TEST_CASE("parameter registry rejects aliases and duplicates") {
  vf::ParamRegistry<double> reg;
  Tensor<double> a({3});
  Tensor<double> b = a;  // shares storage
  reg.add("a", a);
  REQUIRE_THROWS_AS(reg.add("b", b), vf::ContractError);
  Tensor<double> c({3});
  REQUIRE_THROWS_AS(reg.add("a", c), vf::ContractError);
}
