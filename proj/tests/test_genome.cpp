#include <stdexcept>

#include "bunas/genome.hpp"
#include "doctest.h"

using namespace bunas;

namespace {

// Independent parameter walker: recomputes the trainable-scalar count from
// first principles, never reusing param_count's switch.
int64_t walker_param_count(const NetworkSpec& spec) {
  int64_t total = 0;
  for (const SpecLayer& l : spec.layers) {
    if (l.kind == SpecLayerKind::DwConv3) {
      total += l.out_ch * 3 * 3;
      if (l.has_bias) total += l.out_ch;
    } else if (l.kind == SpecLayerKind::PwConv1) {
      total += l.out_ch * l.in_ch;
      if (l.has_bias) total += l.out_ch;
    } else if (l.kind == SpecLayerKind::Bn) {
      total += l.out_ch + l.out_ch;
    }
  }
  return total;
}

}  // namespace

TEST_CASE("preset c resolves to the reference configuration: shapes and concat") {
  NetworkGenome g = preset_genome('c');
  CHECK(g.depth == 6);
  CHECK(g.fv1 == std::vector<int>{48, 96, 192, 384, 512, 96});
  NetworkSpec spec = instantiate(g, InputShape{3, 160, 320});

  // The bypass concat must present 512 main + 768 reordered channels to the
  // last bundle's depthwise conv.
  bool found_concat = false;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const SpecLayer& l = spec.layers[i];
    if (l.kind == SpecLayerKind::Concat) {
      found_concat = true;
      CHECK(l.in_ch == 512);
      CHECK(l.out_ch == 1280);
      CHECK(spec.layers[i + 1].kind == SpecLayerKind::DwConv3);
      CHECK(spec.layers[i + 1].in_ch == 1280);
    }
  }
  CHECK(found_concat);
  CHECK(spec.grid_h == 20);
  CHECK(spec.grid_w == 40);

  // One reorder on the bypass branch (one pool crossed), quadrupling channels.
  int reorders = 0;
  for (const SpecLayer& l : spec.layers) {
    if (l.kind == SpecLayerKind::Reorder) {
      ++reorders;
      CHECK(l.on_bypass);
      CHECK(l.in_ch == 192);
      CHECK(l.out_ch == 768);
    }
  }
  CHECK(reorders == 1);
}

TEST_CASE("preset c parameter count: frozen regression constant") {
  NetworkSpec spec = instantiate(preset_genome('c'), InputShape{3, 160, 320});
  const int64_t walked = walker_param_count(spec);
  // Frozen from the independent walker; within 2% of the reference 0.44M figure.
  CHECK(walked == 442059);
  CHECK(param_count(spec) == walked);
  CHECK(std::abs(double(walked) / 440000.0 - 1.0) < 0.02);
}

TEST_CASE("single pointwise layer 3->48 with bias counts 192") {
  NetworkGenome g;
  g.bundle_id = 1;  // pwconv1 + bn + act
  g.depth = 1;
  g.fv1 = {48};
  g.fv2 = {0};
  NetworkSpec spec = instantiate(g, InputShape{3, 8, 8});
  // layer 0 is the pwconv (no bias, BN follows): 3*48 = 144; BN adds 96;
  // head (48->10, bias) adds 490.
  CHECK(param_count(spec) == 144 + 96 + 490);
  // also: a raw biased 3->48 pointwise is 3*48+48 = 192 scalars
  SpecLayer raw{SpecLayerKind::PwConv1, "x", 3, 48, 8, 8, 8, 8, 0, false, true};
  NetworkSpec tiny;
  tiny.layers = {raw};
  CHECK(param_count(tiny) == 192);
}

TEST_CASE("depth-1 single-bundle network keeps spatial size") {
  NetworkGenome g;
  g.bundle_id = 0;
  g.depth = 1;
  g.fv1 = {24};
  g.fv2 = {0};
  NetworkSpec spec = instantiate(g, InputShape{3, 32, 64});
  CHECK(spec.grid_h == 32);
  CHECK(spec.grid_w == 64);
}

TEST_CASE("pool capacity: five pools fit a 160x320 input, more break evenness") {
  CHECK(max_pool_count(InputShape{3, 160, 320}) == 5);

  auto genome_with_pools = [](int pools) {
    NetworkGenome g;
    g.bundle_id = 0;
    g.depth = 8;
    g.fv1.assign(8, 24);
    g.fv2.assign(8, 0);
    for (int i = 0; i < pools; ++i) g.fv2[size_t(i)] = 1;
    return g;
  };
  NetworkSpec ok = instantiate(genome_with_pools(5), InputShape{3, 160, 320});
  CHECK(ok.grid_h == 5);
  CHECK(ok.grid_w == 10);
  // The sixth pool would act on a 5x10 map.
  CHECK_THROWS_WITH_AS(instantiate(genome_with_pools(6), InputShape{3, 160, 320}),
                       doctest::Contains("pool after bundle 6"), std::invalid_argument);
  CHECK_THROWS_AS(instantiate(genome_with_pools(8), InputShape{3, 160, 320}),
                  std::invalid_argument);
}

TEST_CASE("macs formulas") {
  // pointwise 2->4 on 2x2: Cin*Cout*H*W = 2*4*2*2 = 32
  NetworkSpec s1;
  s1.layers = {SpecLayer{SpecLayerKind::PwConv1, "x", 2, 4, 2, 2, 2, 2, 0, false, false}};
  CHECK(macs_count(s1) == 32);
  // depthwise C=1 on 4x4: 9*16 = 144
  NetworkSpec s2;
  s2.layers = {SpecLayer{SpecLayerKind::DwConv3, "x", 1, 1, 4, 4, 4, 4, 0, false, false}};
  CHECK(macs_count(s2) == 144);
}

TEST_CASE("doubling input height doubles every pre-pool layer's macs") {
  NetworkGenome g;
  g.bundle_id = 0;
  g.depth = 2;
  g.fv1 = {16, 32};
  g.fv2 = {0, 0};  // no pools: doubling H doubles everything
  const int64_t m1 = macs_count(instantiate(g, InputShape{3, 16, 32}));
  const int64_t m2 = macs_count(instantiate(g, InputShape{3, 32, 32}));
  CHECK(m2 == 2 * m1);
}

TEST_CASE("random genomes: determinism and validity") {
  GenomeBounds b;
  b.depth = 6;
  b.max_pools = 3;
  b.bundle_ids = {0, 1, 2, 3};
  Rng r1(99), r2(99);
  NetworkGenome g1 = random_genome(r1, b);
  NetworkGenome g2 = random_genome(r2, b);
  CHECK(g1 == g2);

  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    NetworkGenome g = random_genome(rng, b);
    CHECK_NOTHROW(g.validate(&b));
    CHECK(int(g.fv1.size()) == 6);
  }
}

TEST_CASE("random genome over 100 seeds always instantiates") {
  GenomeBounds b;
  b.depth = 4;
  b.width_alphabet = {24, 48, 96};
  b.max_pools = 3;
  for (uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    NetworkGenome g = random_genome(rng, b);
    CHECK_NOTHROW(instantiate(g, InputShape{3, 64, 64}));
  }
}

TEST_CASE("unsatisfiable bounds error") {
  GenomeBounds b;
  b.depth = 2;
  b.max_pools = 5;  // exceeds depth
  Rng rng(1);
  CHECK_THROWS_AS(random_genome(rng, b), std::invalid_argument);
  GenomeBounds b2;
  b2.width_alphabet = {};
  CHECK_THROWS_AS(b2.validate(), std::invalid_argument);
}

TEST_CASE("instantiate is deterministic: equal genomes, equal specs") {
  NetworkGenome g = preset_genome('b');
  NetworkSpec s1 = instantiate(g, InputShape{3, 160, 320});
  NetworkSpec s2 = instantiate(g, InputShape{3, 160, 320});
  REQUIRE(s1.layers.size() == s2.layers.size());
  for (size_t i = 0; i < s1.layers.size(); ++i) {
    CHECK(s1.layers[i].name == s2.layers[i].name);
    CHECK(s1.layers[i].out_ch == s2.layers[i].out_ch);
  }
}

TEST_CASE("removing the bypass changes only the last bundle's input side") {
  NetworkGenome with = preset_genome('c');
  NetworkGenome without = with;
  without.bypass.reset();
  NetworkSpec sw = instantiate(with, InputShape{3, 160, 320});
  NetworkSpec so = instantiate(without, InputShape{3, 160, 320});
  // Upstream of bundle 6 the layer lists agree.
  size_t i = 0, j = 0;
  while (i < sw.layers.size() && sw.layers[i].bundle_index < 5) {
    if (sw.layers[i].kind == SpecLayerKind::Reorder ||
        sw.layers[i].kind == SpecLayerKind::Concat) {
      ++i;
      continue;
    }
    REQUIRE(j < so.layers.size());
    CHECK(sw.layers[i].name == so.layers[j].name);
    CHECK(sw.layers[i].out_ch == so.layers[j].out_ch);
    ++i;
    ++j;
  }
  // Bundle 6 input differs: 1280 with bypass, 512 without.
  for (const SpecLayer& l : sw.layers) {
    if (l.bundle_index == 5 && l.kind == SpecLayerKind::DwConv3) CHECK(l.in_ch == 1280);
  }
  for (const SpecLayer& l : so.layers) {
    if (l.bundle_index == 5 && l.kind == SpecLayerKind::DwConv3) CHECK(l.in_ch == 512);
  }
}

TEST_CASE("genome text round trip is stable") {
  NetworkGenome g = preset_genome('c');
  const std::string text = genome_to_text(g);
  NetworkGenome back = genome_from_text(text);
  CHECK(back == g);
  CHECK(genome_to_text(back) == text);

  NetworkGenome plain;
  plain.bundle_id = 2;
  plain.depth = 3;
  plain.fv1 = {24, 48, 96};
  plain.fv2 = {1, 0, 1};
  plain.activation = Activation::Relu;
  CHECK(genome_from_text(genome_to_text(plain)) == plain);

  CHECK_THROWS_AS(genome_from_text("bundle = 0\n"), std::invalid_argument);
  CHECK_THROWS_AS(genome_from_text("depth = 1\nfv1 = 8\nfv2 = 0\nwhat = 1\n"),
                  std::invalid_argument);
}

TEST_CASE("bundle catalog invariants") {
  for (const Bundle& b : bundle_catalog()) CHECK_NOTHROW(b.validate());
  CHECK_THROWS_AS(bundle_by_id(99), std::invalid_argument);
  Bundle bad{9, {LayerOp::Bn}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  Bundle two_pools{9, {LayerOp::PwConv1, LayerOp::MaxPool2, LayerOp::MaxPool2}};
  CHECK_THROWS_AS(two_pools.validate(), std::invalid_argument);
}

TEST_CASE("genome invariants: fv lengths, widths, bypass ordering") {
  NetworkGenome g;
  g.bundle_id = 0;
  g.depth = 3;
  g.fv1 = {8, 8};  // wrong length
  g.fv2 = {0, 0, 0};
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g.fv1 = {8, 8, 8};
  CHECK_NOTHROW(g.validate());
  g.bypass = Bypass{2, 2};
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  g.bypass = Bypass{1, 3};
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("preset a: five bundles, no bypass, head on 512 channels") {
  NetworkGenome g = preset_genome('a');
  CHECK(g.depth == 5);
  CHECK_FALSE(g.bypass.has_value());
  NetworkSpec spec = instantiate(g, InputShape{3, 160, 320});
  CHECK(spec.layers.back().in_ch == 512);
  for (const SpecLayer& l : spec.layers) CHECK(l.kind != SpecLayerKind::Concat);
}

TEST_CASE("width-scaled preset divides fv1") {
  NetworkGenome g = preset_genome('c', 4);
  CHECK(g.fv1 == std::vector<int>{12, 24, 48, 96, 128, 24});
  CHECK_NOTHROW(instantiate(g, InputShape{3, 160, 320}));
}
