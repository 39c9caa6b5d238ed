// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic video datasets engineered so that temporal order carries (or
// deliberately does not carry) the label:
//   directional-motion: a textured patch drifts left-to-right (class 0) or
//     right-to-left (class 1); reversing a clip in time yields a pixel-exact
//     clip of the other class, so frame-order-blind models sit at chance.
//   static-texture: per-class template, frames identical within a clip.
//   speed-contrast: same drift direction, two speeds.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stcnn/tensor.hpp"

namespace stcnn {

enum class SynthKind { DirectionalMotion, StaticTexture, SpeedContrast };

inline const char* to_string(SynthKind k) {
  switch (k) {
    case SynthKind::DirectionalMotion: return "directional-motion";
    case SynthKind::StaticTexture: return "static-texture";
    case SynthKind::SpeedContrast: return "speed-contrast";
  }
  return "?";
}

inline SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "directional-motion") return SynthKind::DirectionalMotion;
  if (s == "static-texture") return SynthKind::StaticTexture;
  if (s == "speed-contrast") return SynthKind::SpeedContrast;
  throw Error("unknown dataset kind '" + s +
              "' (directional-motion|static-texture|speed-contrast)");
}

struct DatasetSpec {
  SynthKind kind = SynthKind::DirectionalMotion;
  std::int64_t t = 16, h = 32, w = 32, c = 1;
  int classes = 2;
  int count = 500;
  std::uint64_t seed = 1;
  double noise = 0.05;
  std::int64_t patch = 8;  // moving patch side
  std::int64_t speed = 1;  // pixels per frame
};

template <typename T>
struct Dataset {
  DatasetSpec spec;
  std::vector<Tensor<T>> clips;  // each [T,H,W,C]
  std::vector<int> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(clips.size()); }
};

namespace detail {

inline std::int64_t wrap(std::int64_t x, std::int64_t m) { return ((x % m) + m) % m; }

}  // namespace detail

// Deterministic renderer for one directional clip. direction +1 moves the
// patch left-to-right. The noise field has clip shape and is added verbatim,
// which makes the reversal identity testable: reversing a (+1, phase) clip
// gives the (-1, phase + speed*(T-1), time-flipped noise) clip exactly.
template <typename T>
Tensor<T> render_directional(const DatasetSpec& s, const Tensor<T>& texture, std::int64_t phase_x,
                             std::int64_t top_y, int direction, const Tensor<T>& noise) {
  Tensor<T> clip(Shape{s.t, s.h, s.w, s.c});
  for (std::int64_t f = 0; f < s.t; ++f) {
    const std::int64_t x0 = detail::wrap(phase_x + direction * s.speed * f, s.w);
    for (std::int64_t py = 0; py < s.patch; ++py)
      for (std::int64_t px = 0; px < s.patch; ++px) {
        const std::int64_t y = top_y + py;
        const std::int64_t x = detail::wrap(x0 + px, s.w);  // horizontal wrap-around
        for (std::int64_t ch = 0; ch < s.c; ++ch)
          clip[((f * s.h + y) * s.w + x) * s.c + ch] = texture[(py * s.patch + px) * s.c + ch];
      }
  }
  for (std::int64_t i = 0; i < clip.size(); ++i) clip[i] += noise[i];
  return clip;
}

template <typename T>
Dataset<T> generate_synthetic(const DatasetSpec& spec) {
  STCNN_CHECK(spec.t >= 8 && spec.h >= 16 && spec.w >= 16 && spec.c >= 1,
              "dataset geometry must be at least (8,16,16,1), got (" << spec.t << "," << spec.h
                                                                     << "," << spec.w << ","
                                                                     << spec.c << ")");
  STCNN_CHECK(spec.patch <= spec.h && spec.patch <= spec.w,
              "patch " << spec.patch << " does not fit in " << spec.h << "x" << spec.w);
  STCNN_CHECK(spec.count > 0 && spec.classes >= 2, "need count > 0 and >= 2 classes");
  Dataset<T> ds;
  ds.spec = spec;
  Rng rng(spec.seed);

  // Class templates for static-texture: a fixed random image per class.
  std::vector<Tensor<T>> templates;
  if (spec.kind == SynthKind::StaticTexture) {
    for (int k = 0; k < spec.classes; ++k) {
      Tensor<T> tpl(Shape{spec.h, spec.w, spec.c});
      tpl.fill_uniform(rng, 0.0, 1.0);
      templates.push_back(tpl);
    }
  }

  for (int i = 0; i < spec.count; ++i) {
    const int label = i % spec.classes;
    switch (spec.kind) {
      case SynthKind::DirectionalMotion:
      case SynthKind::SpeedContrast: {
        STCNN_CHECK(spec.classes == 2, "motion datasets are binary, got " << spec.classes);
        Tensor<T> texture(Shape{spec.patch, spec.patch, spec.c});
        texture.fill_uniform(rng, 0.25, 1.0);
        const std::int64_t phase = rng.below(spec.w);
        const std::int64_t top = rng.below(spec.h - spec.patch + 1);
        Tensor<T> noise(Shape{spec.t, spec.h, spec.w, spec.c});
        if (spec.noise > 0) noise.fill_normal(rng, 0.0, spec.noise);
        DatasetSpec s = spec;
        int direction = 1;
        if (spec.kind == SynthKind::DirectionalMotion) {
          direction = label == 0 ? 1 : -1;
        } else {
          s.speed = label == 0 ? spec.speed : 2 * spec.speed;
        }
        ds.clips.push_back(render_directional(s, texture, phase, top, direction, noise));
        break;
      }
      case SynthKind::StaticTexture: {
        Tensor<T> frame = templates[static_cast<std::size_t>(label)].clone();
        if (spec.noise > 0) {
          Tensor<T> noise(Shape{spec.h, spec.w, spec.c});
          noise.fill_normal(rng, 0.0, spec.noise);
          for (std::int64_t j = 0; j < frame.size(); ++j) frame[j] += noise[j];
        }
        Tensor<T> clip(Shape{spec.t, spec.h, spec.w, spec.c});
        for (std::int64_t f = 0; f < spec.t; ++f)
          std::copy(frame.data(), frame.data() + frame.size(), clip.data() + f * frame.size());
        ds.clips.push_back(std::move(clip));
        break;
      }
    }
    ds.labels.push_back(label);
  }
  return ds;
}

// Packs clips [i0, i0+n) into one [N,T,H,W,C] batch tensor.
template <typename T>
Tensor<T> batch_of(const Dataset<T>& ds, const std::vector<int>& indices) {
  STCNN_CHECK(!indices.empty(), "empty batch");
  const Shape cs = ds.clips[0].shape();
  Tensor<T> out(Shape{static_cast<std::int64_t>(indices.size()), cs[0], cs[1], cs[2], cs[3]});
  const std::int64_t clip_elems = ds.clips[0].size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor<T>& c = ds.clips[static_cast<std::size_t>(indices[i])];
    std::copy(c.data(), c.data() + clip_elems, out.data() + static_cast<std::int64_t>(i) * clip_elems);
  }
  return out;
}

// Dataset cache: a directory holding raw little-endian clip tensors plus a
// JSON manifest.
template <typename T>
void save_dataset(const Dataset<T>& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json m;
  m["schema"] = "stcnn-dataset-v1";
  m["kind"] = to_string(ds.spec.kind);
  m["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  m["geometry"] = {ds.spec.t, ds.spec.h, ds.spec.w, ds.spec.c};
  m["classes"] = ds.spec.classes;
  m["seed"] = ds.spec.seed;
  m["noise"] = ds.spec.noise;
  m["patch"] = ds.spec.patch;
  m["speed"] = ds.spec.speed;
  m["entries"] = nlohmann::json::array();
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%06lld.bin", static_cast<long long>(i));
    m["entries"].push_back({{"file", name}, {"label", ds.labels[static_cast<std::size_t>(i)]}});
    std::ofstream os(fs::path(dir) / name, std::ios::binary);
    const Tensor<T>& c = ds.clips[static_cast<std::size_t>(i)];
    os.write(reinterpret_cast<const char*>(c.data()),
             static_cast<std::streamsize>(c.size() * static_cast<std::int64_t>(sizeof(T))));
    STCNN_CHECK(os.good(), "failed writing clip " << i << " to " << dir);
  }
  std::ofstream ms(fs::path(dir) / "manifest.json");
  ms << m.dump(2) << "\n";
}

template <typename T>
Dataset<T> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream ms(fs::path(dir) / "manifest.json");
  STCNN_CHECK(ms.good(), "no manifest.json in " << dir);
  nlohmann::json m = nlohmann::json::parse(ms);
  STCNN_CHECK(m.at("schema") == "stcnn-dataset-v1", "unknown dataset schema in " << dir);
  Dataset<T> ds;
  ds.spec.kind = synth_kind_from_string(m.at("kind").get<std::string>());
  auto g = m.at("geometry");
  ds.spec.t = g[0]; ds.spec.h = g[1]; ds.spec.w = g[2]; ds.spec.c = g[3];
  ds.spec.classes = m.at("classes");
  ds.spec.seed = m.at("seed");
  ds.spec.noise = m.at("noise");
  ds.spec.patch = m.at("patch");
  ds.spec.speed = m.at("speed");
  ds.spec.count = static_cast<int>(m.at("entries").size());
  for (const auto& e : m.at("entries")) {
    Tensor<T> clip(Shape{ds.spec.t, ds.spec.h, ds.spec.w, ds.spec.c});
    std::ifstream is(fs::path(dir) / e.at("file").get<std::string>(), std::ios::binary);
    is.read(reinterpret_cast<char*>(clip.data()),
            static_cast<std::streamsize>(clip.size() * static_cast<std::int64_t>(sizeof(T))));
    STCNN_CHECK(is.good(), "truncated clip file in " << dir);
    ds.clips.push_back(std::move(clip));
    ds.labels.push_back(e.at("label").get<int>());
  }
  return ds;
}

}  // namespace stcnn
