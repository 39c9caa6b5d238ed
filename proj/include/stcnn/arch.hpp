// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Declarative description of every network variant: the inflated
// Inception-V1 backbone table, network surgery (bottom-heavy / top-heavy 2D-3D
// mixes at a transition index K), separable and gated forms, and a stable
// text serialization.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stcnn/blocks.hpp"

namespace stcnn {

enum class Family { I2D, I3D, BottomHeavy, TopHeavy };

const char* to_string(Family f);
Family family_from_string(const std::string& s);

enum class LayerType { StemConv, Pointwise, MaxPool, Inception, Head };

struct LayerSpec {
  LayerType type = LayerType::StemConv;
  std::string name;
  ConvKind kind = ConvKind::Conv2D;  // StemConv / Inception only
  bool gated = false;                // gates after temporal convs (Sep only)

  // StemConv / Pointwise geometry.
  std::int64_t spatial_k = 1;
  std::int64_t temporal_k = 1;       // kt when the unit is full 3D
  std::int64_t sep_temporal_k = 1;   // kt of the temporal half when separable
  std::int64_t out_channels = 0;

  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> window{1, 1, 1};  // MaxPool only

  InceptionConfig incep;  // Inception only

  // Position in the bottom-to-top surgery ordering; 0 for layers that are
  // never operated on (pools, pointwise convs, head).
  int surgery_index = 0;
};

struct InputGeometry {
  std::int64_t t = 0, h = 0, w = 0, c = 0;
};

struct ArchSpec {
  std::string name;  // preset name or "custom"
  Family family = Family::I3D;
  ConvKind conv3d_kind = ConvKind::Conv3D;  // what a "3D" unit uses: full or separable
  int k = 0;                                // transition index (meaning depends on family)
  bool gated = false;
  bool mini = false;
  std::int64_t channel_div = 1;
  InputGeometry input;
  std::int64_t classes = 400;
  double dropout_rate = 0.5;
  bool bn_scale = false;  // learnable gamma; default keeps beta only

  std::vector<LayerSpec> layers;

  int k_total() const;
  int num_3d_units() const;
};

// Number of surgery units in the canonical backbone (stem convs + blocks).
int backbone_k_total();

// Core constructor. `family` + `k` decide which surgery units are
// spatiotemporal; those units get `kind3d` (full or separable), the rest 2D.
// BottomHeavy K ranges 0..K_total (units with index <= K are 3D);
// TopHeavy K ranges 1..K_total+1 (units with index >= K are 3D).
// I3D/I2D ignore K. Gates attach after every temporal convolution, so they
// only materialize on separable units.
ArchSpec build_variant(Family family, ConvKind kind3d, int k, bool gated, bool mini = false,
                       std::int64_t channel_div = 0, InputGeometry input = {},
                       std::int64_t classes = 0);

// Named presets: i3d, i2d, s3d, s3dg, fast-s3d (and mini-... forms).
ArchSpec preset(const std::string& name);
std::vector<std::string> preset_names();

// Per-layer geometry walk.
struct DescribeRow {
  std::string name;
  std::string type;     // stem-conv | pointwise | maxpool | inception | head
  std::string kind;     // 2d | 3d | sep | -
  std::string kernel;   // e.g. 7x7x7, or the sep pair
  std::string stride;
  bool gated = false;
  std::int64_t out_t = 0, out_h = 0, out_w = 0, out_c = 0;
};

std::vector<DescribeRow> describe(const ArchSpec& spec);
std::string describe_text(const ArchSpec& spec);

// Stable key/value serialization; parse(serialize(spec)) reproduces the spec.
std::string serialize(const ArchSpec& spec);
ArchSpec parse_arch(const std::string& text);

}  // namespace stcnn
