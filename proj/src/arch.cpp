// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "stcnn/arch.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace stcnn {

const char* to_string(Family f) {
  switch (f) {
    case Family::I2D: return "i2d";
    case Family::I3D: return "i3d";
    case Family::BottomHeavy: return "bottom_heavy";
    case Family::TopHeavy: return "top_heavy";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  if (s == "i2d") return Family::I2D;
  if (s == "i3d") return Family::I3D;
  if (s == "bottom_heavy") return Family::BottomHeavy;
  if (s == "top_heavy") return Family::TopHeavy;
  throw Error("unknown family '" + s + "' (i2d|i3d|bottom_heavy|top_heavy)");
}

namespace {

ConvKind kind_from_string(const std::string& s) {
  if (s == "2d") return ConvKind::Conv2D;
  if (s == "3d") return ConvKind::Conv3D;
  if (s == "sep") return ConvKind::Sep;
  throw Error("unknown conv kind '" + s + "' (2d|3d|sep)");
}

std::int64_t divided(std::int64_t channels, std::int64_t div) {
  STCNN_CHECK(channels % div == 0,
              "channel width " << channels << " not divisible by channel_div " << div);
  return channels / div;
}

struct IncepRow {
  const char* name;
  std::int64_t b0, b1r, b1, b2r, b2, b3;
};

// The standard Inception-V1 channel table.
constexpr IncepRow kInception3[] = {
    {"Mixed3b", 64, 96, 128, 16, 32, 32},
    {"Mixed3c", 128, 128, 192, 32, 96, 64},
};
constexpr IncepRow kInception4[] = {
    {"Mixed4b", 192, 96, 208, 16, 48, 64},
    {"Mixed4c", 160, 112, 224, 24, 64, 64},
    {"Mixed4d", 128, 128, 256, 24, 64, 64},
    {"Mixed4e", 112, 144, 288, 32, 64, 64},
    {"Mixed4f", 256, 160, 320, 32, 128, 128},
};
constexpr IncepRow kInception5[] = {
    {"Mixed5b", 256, 160, 320, 32, 128, 128},
    {"Mixed5c", 384, 192, 384, 48, 128, 128},
};

// Builds the canonical layer list with every surgery unit still marked 2D.
//
// Geometry is identical across variants: strides never depend on the conv
// kind, so 2D/3D/sep versions of the same backbone see the same activation
// extents everywhere. The desk-scale mini backbone differs in two ways that
// keep temporal processing exactly reversible for 2D networks: the stem has
// no temporal stride, and the two temporally strided pools use window ==
// stride (non-overlapping).
std::vector<LayerSpec> canonical_layers(bool mini, std::int64_t div) {
  std::vector<LayerSpec> ls;
  int unit = 0;

  LayerSpec conv1a;
  conv1a.type = LayerType::StemConv;
  conv1a.name = "Conv1a";
  conv1a.spatial_k = 7;
  conv1a.temporal_k = 7;
  conv1a.sep_temporal_k = 3;
  conv1a.out_channels = divided(64, div);
  conv1a.stride = mini ? std::array<std::int64_t, 3>{1, 2, 2} : std::array<std::int64_t, 3>{2, 2, 2};
  conv1a.surgery_index = ++unit;
  ls.push_back(conv1a);

  LayerSpec max2a;
  max2a.type = LayerType::MaxPool;
  max2a.name = "Max2a";
  max2a.window = {1, 3, 3};
  max2a.stride = {1, 2, 2};
  ls.push_back(max2a);

  LayerSpec conv2b;
  conv2b.type = LayerType::Pointwise;
  conv2b.name = "Conv2b";
  conv2b.out_channels = divided(64, div);
  ls.push_back(conv2b);

  LayerSpec conv2c;
  conv2c.type = LayerType::StemConv;
  conv2c.name = "Conv2c";
  conv2c.spatial_k = 3;
  conv2c.temporal_k = 3;
  conv2c.sep_temporal_k = 3;
  conv2c.out_channels = divided(192, div);
  conv2c.surgery_index = ++unit;
  ls.push_back(conv2c);

  LayerSpec max3a = max2a;
  max3a.name = "Max3a";
  ls.push_back(max3a);

  auto add_block = [&](const IncepRow& r) {
    LayerSpec b;
    b.type = LayerType::Inception;
    b.name = r.name;
    b.incep.b0 = divided(r.b0, div);
    b.incep.b1_reduce = divided(r.b1r, div);
    b.incep.b1_out = divided(r.b1, div);
    b.incep.b2_reduce = divided(r.b2r, div);
    b.incep.b2_out = divided(r.b2, div);
    b.incep.b3_proj = divided(r.b3, div);
    b.surgery_index = ++unit;
    ls.push_back(b);
  };
  for (const auto& r : kInception3) add_block(r);

  LayerSpec max4a;
  max4a.type = LayerType::MaxPool;
  max4a.name = "Max4a";
  max4a.window = mini ? std::array<std::int64_t, 3>{2, 3, 3} : std::array<std::int64_t, 3>{3, 3, 3};
  max4a.stride = {2, 2, 2};
  ls.push_back(max4a);
  for (const auto& r : kInception4) add_block(r);

  LayerSpec max5a;
  max5a.type = LayerType::MaxPool;
  max5a.name = "Max5a";
  max5a.window = {2, 2, 2};
  max5a.stride = {2, 2, 2};
  ls.push_back(max5a);
  for (const auto& r : kInception5) add_block(r);

  LayerSpec head;
  head.type = LayerType::Head;
  head.name = "Head";
  ls.push_back(head);
  return ls;
}

}  // namespace

int backbone_k_total() { return 11; }

int ArchSpec::k_total() const {
  int m = 0;
  for (const auto& l : layers) m = std::max(m, l.surgery_index);
  return m;
}

int ArchSpec::num_3d_units() const {
  int n = 0;
  for (const auto& l : layers)
    if (l.surgery_index > 0 && l.kind != ConvKind::Conv2D) ++n;
  return n;
}

ArchSpec build_variant(Family family, ConvKind kind3d, int k, bool gated, bool mini,
                       std::int64_t channel_div, InputGeometry input, std::int64_t classes) {
  STCNN_CHECK(kind3d == ConvKind::Conv3D || kind3d == ConvKind::Sep,
              "the spatiotemporal half of a variant is 3d or sep, not 2d");
  ArchSpec spec;
  spec.name = "custom";
  spec.family = family;
  spec.conv3d_kind = kind3d;
  spec.gated = gated;
  spec.mini = mini;
  spec.channel_div = channel_div > 0 ? channel_div : (mini ? 8 : 1);
  if (input.t > 0) {
    spec.input = input;
  } else {
    spec.input = mini ? InputGeometry{16, 32, 32, 1} : InputGeometry{64, 224, 224, 3};
  }
  spec.classes = classes > 0 ? classes : (mini ? 2 : 400);
  spec.layers = canonical_layers(mini, spec.channel_div);

  const int total = spec.k_total();
  switch (family) {
    case Family::I3D: spec.k = total; break;
    case Family::I2D: spec.k = 0; break;
    case Family::BottomHeavy:
      STCNN_CHECK(k >= 0 && k <= total, "bottom-heavy K must be in 0.." << total << ", got " << k);
      spec.k = k;
      break;
    case Family::TopHeavy:
      STCNN_CHECK(k >= 1 && k <= total + 1, "top-heavy K must be in 1.." << total + 1 << ", got " << k);
      spec.k = k;
      break;
  }

  for (auto& l : spec.layers) {
    if (l.surgery_index == 0) continue;
    bool spatiotemporal = false;
    switch (family) {
      case Family::I3D: spatiotemporal = true; break;
      case Family::I2D: spatiotemporal = false; break;
      case Family::BottomHeavy: spatiotemporal = l.surgery_index <= spec.k; break;
      case Family::TopHeavy: spatiotemporal = l.surgery_index >= spec.k; break;
    }
    l.kind = spatiotemporal ? kind3d : ConvKind::Conv2D;
    // Gates sit after [kt,1,1] temporal convolutions, which only separable
    // units have.
    l.gated = gated && l.kind == ConvKind::Sep;
  }
  return spec;
}

ArchSpec preset(const std::string& name) {
  std::string base = name;
  bool mini = false;
  if (base.rfind("mini-", 0) == 0) {
    mini = true;
    base = base.substr(5);
  }
  ArchSpec s;
  if (base == "i3d") {
    s = build_variant(Family::I3D, ConvKind::Conv3D, 0, false, mini);
  } else if (base == "i2d") {
    s = build_variant(Family::I2D, ConvKind::Conv3D, 0, false, mini);
  } else if (base == "s3d") {
    s = build_variant(Family::I3D, ConvKind::Sep, 0, false, mini);
  } else if (base == "s3dg") {
    s = build_variant(Family::I3D, ConvKind::Sep, 0, true, mini);
  } else if (base == "fast-s3d") {
    // Separable 3D in the top two stages (Mixed4b and above), 2D below.
    s = build_variant(Family::TopHeavy, ConvKind::Sep, 5, false, mini);
  } else {
    throw Error("unknown preset '" + name + "'; known: i3d i2d s3d s3dg fast-s3d (mini-*)");
  }
  s.name = name;
  return s;
}

std::vector<std::string> preset_names() {
  return {"i3d", "i2d", "s3d", "s3dg", "fast-s3d",
          "mini-i3d", "mini-i2d", "mini-s3d", "mini-s3dg", "mini-fast-s3d"};
}

namespace {

std::string kernel_string(const LayerSpec& l) {
  std::ostringstream os;
  switch (l.type) {
    case LayerType::StemConv:
      if (l.kind == ConvKind::Conv3D) {
        os << l.temporal_k << "x" << l.spatial_k << "x" << l.spatial_k;
      } else if (l.kind == ConvKind::Sep) {
        os << "1x" << l.spatial_k << "x" << l.spatial_k << "+" << l.sep_temporal_k << "x1x1";
      } else {
        os << "1x" << l.spatial_k << "x" << l.spatial_k;
      }
      break;
    case LayerType::Pointwise: os << "1x1x1"; break;
    case LayerType::MaxPool: os << l.window[0] << "x" << l.window[1] << "x" << l.window[2]; break;
    case LayerType::Inception: {
      const std::int64_t kt = l.kind == ConvKind::Conv2D ? 1 : l.incep.temporal_k;
      if (l.kind == ConvKind::Sep)
        os << "1x3x3+" << kt << "x1x1";
      else
        os << kt << "x3x3";
      break;
    }
    case LayerType::Head: os << "-"; break;
  }
  return os.str();
}

const char* type_string(LayerType t) {
  switch (t) {
    case LayerType::StemConv: return "stem-conv";
    case LayerType::Pointwise: return "pointwise";
    case LayerType::MaxPool: return "maxpool";
    case LayerType::Inception: return "inception";
    case LayerType::Head: return "head";
  }
  return "?";
}

}  // namespace

std::vector<DescribeRow> describe(const ArchSpec& spec) {
  std::vector<DescribeRow> rows;
  std::int64_t t = spec.input.t, h = spec.input.h, w = spec.input.w, c = spec.input.c;
  for (const auto& l : spec.layers) {
    DescribeRow r;
    r.name = l.name;
    r.type = type_string(l.type);
    r.gated = l.gated;
    r.kernel = kernel_string(l);
    switch (l.type) {
      case LayerType::StemConv:
      case LayerType::Pointwise:
      case LayerType::MaxPool:
        t = conv_out_extent(t, 1, l.stride[0], Padding::Same);
        h = conv_out_extent(h, 1, l.stride[1], Padding::Same);
        w = conv_out_extent(w, 1, l.stride[2], Padding::Same);
        break;
      case LayerType::Inception:
        break;  // stride 1, SAME everywhere
      case LayerType::Head:
        t = 1; h = 1; w = 1;
        break;
    }
    if (l.type == LayerType::StemConv || l.type == LayerType::Pointwise) c = l.out_channels;
    if (l.type == LayerType::Inception) c = l.incep.out_channels();
    if (l.type == LayerType::Head) c = spec.classes;
    r.kind = l.type == LayerType::StemConv || l.type == LayerType::Inception
                 ? to_string(l.kind)
                 : "-";
    {
      std::ostringstream os;
      os << l.stride[0] << "," << l.stride[1] << "," << l.stride[2];
      r.stride = os.str();
    }
    r.out_t = t; r.out_h = h; r.out_w = w; r.out_c = c;
    rows.push_back(r);
  }
  return rows;
}

std::string describe_text(const ArchSpec& spec) {
  std::ostringstream os;
  os << "# " << spec.name << "  family=" << to_string(spec.family)
     << " conv=" << to_string(spec.conv3d_kind) << " k=" << spec.k
     << " gated=" << (spec.gated ? "true" : "false") << " input=" << spec.input.t << "x"
     << spec.input.h << "x" << spec.input.w << "x" << spec.input.c << " classes=" << spec.classes
     << "\n";
  os << "name\ttype\tkind\tkernel\tstride\tgated\tout\n";
  for (const auto& r : describe(spec)) {
    os << r.name << "\t" << r.type << "\t" << r.kind << "\t" << r.kernel << "\t" << r.stride << "\t"
       << (r.gated ? "yes" : "no") << "\t" << r.out_t << "x" << r.out_h << "x" << r.out_w << "x"
       << r.out_c << "\n";
  }
  return os.str();
}

std::string serialize(const ArchSpec& spec) {
  std::ostringstream os;
  os << "# stcnn architecture config v1\n";
  os << "name = " << spec.name << "\n";
  os << "family = " << to_string(spec.family) << "\n";
  os << "conv = " << to_string(spec.conv3d_kind) << "\n";
  os << "k = " << spec.k << "\n";
  os << "gated = " << (spec.gated ? "true" : "false") << "\n";
  os << "scale = " << (spec.mini ? "mini" : "full") << "\n";
  os << "channel_div = " << spec.channel_div << "\n";
  os << "input = " << spec.input.t << "x" << spec.input.h << "x" << spec.input.w << "x"
     << spec.input.c << "\n";
  os << "classes = " << spec.classes << "\n";
  os << "dropout = " << spec.dropout_rate << "\n";
  os << "bn_scale = " << (spec.bn_scale ? "true" : "false") << "\n";
  return os.str();
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

ArchSpec parse_arch(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    STCNN_CHECK(eq != std::string::npos, "bad config line: '" << line << "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto get = [&](const std::string& key, const std::string& dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : it->second;
  };
  const Family family = family_from_string(get("family", "i3d"));
  const ConvKind kind = kind_from_string(get("conv", "3d"));
  const int k = std::stoi(get("k", "0"));
  const bool gated = get("gated", "false") == "true";
  const bool mini = get("scale", "full") == "mini";
  const std::int64_t div = std::stoll(get("channel_div", "0"));
  InputGeometry in{};
  {
    const std::string s = get("input", "");
    if (!s.empty()) {
      char x1, x2, x3;
      std::istringstream gs(s);
      gs >> in.t >> x1 >> in.h >> x2 >> in.w >> x3 >> in.c;
      STCNN_CHECK(gs && x1 == 'x' && x2 == 'x' && x3 == 'x',
                  "bad input geometry '" << s << "', want TxHxWxC");
    }
  }
  const std::int64_t classes = std::stoll(get("classes", "0"));
  ArchSpec spec = build_variant(family, kind, k, gated, mini, div, in, classes);
  spec.name = get("name", "custom");
  spec.dropout_rate = std::stod(get("dropout", "0.5"));
  spec.bn_scale = get("bn_scale", "false") == "true";
  return spec;
}

}  // namespace stcnn
