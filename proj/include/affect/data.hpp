#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "affect/imageio.hpp"
#include "affect/rng.hpp"
#include "affect/tensor.hpp"

namespace affect {

constexpr int kRawSize = 56;   // preprocessed image side
constexpr int kCropSize = 48;  // training crop side
constexpr int kCropMargin = kRawSize - kCropSize;

// One manifest row. expression -1 means unlabeled.
struct ManifestEntry {
  std::string image_path;
  real valence = 0.0;
  real arousal = 0.0;
  int expression = -1;
};

struct ManifestLoad {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> row_errors;  // malformed rows, reported not dropped silently
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

// CSV with header image_path,valence,arousal,expression. Rows with malformed
// fields or out-of-range labels land in row_errors with their line number.
inline ManifestLoad load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("manifest missing header: " + path);
  {
    const auto cols = detail::split_csv(line);
    if (cols.size() != 4 || cols[0] != "image_path" || cols[1] != "valence" ||
        cols[2] != "arousal" || cols[3] != "expression")
      throw IoError("manifest header must be image_path,valence,arousal,expression, got: " + line);
  }
  ManifestLoad out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cols = detail::split_csv(line);
    const auto reject = [&](const std::string& why) {
      out.row_errors.push_back("line " + std::to_string(lineno) + ": " + why);
    };
    if (cols.size() != 4) {
      reject("expected 4 columns, got " + std::to_string(cols.size()));
      continue;
    }
    ManifestEntry e;
    e.image_path = cols[0];
    try {
      e.valence = std::stod(cols[1]);
      e.arousal = std::stod(cols[2]);
    } catch (const std::exception&) {
      reject("non-numeric label");
      continue;
    }
    if (e.valence < -1.0 || e.valence > 1.0) {
      reject("valence " + cols[1] + " outside [-1,1]");
      continue;
    }
    if (e.arousal < -1.0 || e.arousal > 1.0) {
      reject("arousal " + cols[2] + " outside [-1,1]");
      continue;
    }
    if (cols[3] == "unlabeled" || cols[3].empty()) {
      e.expression = -1;
    } else {
      try {
        e.expression = std::stoi(cols[3]);
      } catch (const std::exception&) {
        reject("bad expression field '" + cols[3] + "'");
        continue;
      }
      if (e.expression < 0 || e.expression > 6) {
        reject("expression " + cols[3] + " outside 0..6");
        continue;
      }
    }
    out.entries.push_back(std::move(e));
  }
  return out;
}

// A 56x56 grayscale example with its targets; the element type of datasets.
struct LabeledImage {
  Tensor image;  // [1,56,56], values in [0,1]
  real valence = 0.0;
  real arousal = 0.0;
  int expression = -1;
};

using Dataset = std::vector<LabeledImage>;

// Align-corners bilinear sampling; identical to the network's upsampling
// convention, and an exact identity when sizes already match.
inline Tensor bilinear_resize_gray(const Tensor& src, int out_h, int out_w) {
  require_rank(src, 3, "bilinear_resize input");
  const int h = src.dim(1), w = src.dim(2);
  Tensor dst({1, out_h, out_w});
  const real sy = out_h > 1 ? static_cast<real>(h - 1) / (out_h - 1) : 0.0;
  const real sx = out_w > 1 ? static_cast<real>(w - 1) / (out_w - 1) : 0.0;
  for (int i = 0; i < out_h; ++i) {
    const real py = sy * i;
    const int y0 = std::min(static_cast<int>(py), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const real fy = py - y0;
    for (int j = 0; j < out_w; ++j) {
      const real px = sx * j;
      const int x0 = std::min(static_cast<int>(px), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const real fx = px - x0;
      dst[static_cast<std::size_t>(i) * out_w + j] =
          (1 - fy) * ((1 - fx) * src[static_cast<std::size_t>(y0) * w + x0] +
                      fx * src[static_cast<std::size_t>(y0) * w + x1]) +
          fy * ((1 - fx) * src[static_cast<std::size_t>(y1) * w + x0] +
                fx * src[static_cast<std::size_t>(y1) * w + x1]);
    }
  }
  return dst;
}

// Decoded image -> [1,56,56] in [0,1]: ITU-R 601 luma, bilinear rescale.
inline Tensor preprocess(const ImageU8& img) {
  if (img.width < 1 || img.height < 1) throw ValueError("preprocess: empty image");
  Tensor gray({1, img.height, img.width});
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      real v;
      if (img.channels == 1) {
        v = img.at(y, x, 0) / 255.0;
      } else {
        v = (0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2)) / 255.0;
      }
      gray[static_cast<std::size_t>(y) * img.width + x] = v;
    }
  }
  return bilinear_resize_gray(gray, kRawSize, kRawSize);
}

inline Tensor load_and_preprocess(const std::string& path) {
  try {
    return preprocess(read_image(path));
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError("undecodable image " + path + ": " + e.what());
  }
}

inline Tensor crop48(const Tensor& img56, int dy, int dx) {
  require_rank(img56, 3, "crop input");
  if (img56.dim(1) != kRawSize || img56.dim(2) != kRawSize)
    throw ShapeError("crop expects [1,56,56], got " + shape_str(img56.shape()));
  if (dy < 0 || dy > kCropMargin || dx < 0 || dx > kCropMargin)
    throw ValueError("crop offset (" + std::to_string(dy) + "," + std::to_string(dx) +
                     ") outside 0.." + std::to_string(kCropMargin));
  Tensor out({1, kCropSize, kCropSize});
  for (int i = 0; i < kCropSize; ++i)
    for (int j = 0; j < kCropSize; ++j)
      out[static_cast<std::size_t>(i) * kCropSize + j] =
          img56[static_cast<std::size_t>(i + dy) * kRawSize + (j + dx)];
  return out;
}

inline Tensor hflip(const Tensor& img) {
  require_rank(img, 3, "hflip input");
  const int h = img.dim(1), w = img.dim(2);
  Tensor out({1, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(i) * w + j] = img[static_cast<std::size_t>(i) * w + (w - 1 - j)];
  return out;
}

// Training augmentation: uniform crop offset in {0..8}^2, coin-flip mirror.
// Pure function of (image, rng state).
inline Tensor augment(const Tensor& img56, Rng& rng) {
  const int dy = rng.uniform_int(0, kCropMargin);
  const int dx = rng.uniform_int(0, kCropMargin);
  Tensor crop = crop48(img56, dy, dx);
  return rng.bernoulli(0.5) ? hflip(crop) : crop;
}

inline Tensor center_crop48(const Tensor& img56) {
  return crop48(img56, kCropMargin / 2, kCropMargin / 2);
}

// ---------------------------------------------------------------------------
// Synthetic data: a desk-scale, learnable-by-construction stand-in. Labels
// are the latent blob coordinates; the expression class quantizes the latent
// angle, so every target is recoverable from pixels alone.
// ---------------------------------------------------------------------------

struct SynthLatents {
  real z1 = 0.0;  // valence latent
  real z2 = 0.0;  // arousal latent
};

inline int expression_from_latents(real z1, real z2) {
  const real angle = std::atan2(z2, z1);  // (-pi, pi]
  int bin = static_cast<int>((angle + 3.14159265358979323846) / (2.0 * 3.14159265358979323846) *
                             7.0);
  if (bin < 0) bin = 0;
  if (bin > 6) bin = 6;
  return bin;
}

// Latents map to mirror- and crop-stable image features: valence drives the
// blob contrast, arousal its radius. Horizontal-flip augmentation and small
// crop offsets therefore leave both targets recoverable.
inline Tensor render_synth_image(const SynthLatents& latents) {
  Tensor img({1, kRawSize, kRawSize});
  const real cx = (kRawSize - 1) / 2.0;
  const real cy = (kRawSize - 1) / 2.0;
  const real amp = 0.45 + 0.35 * latents.z1;    // 0.135 .. 0.765
  const real sigma = 4.5 + 2.2 * latents.z2;    // 2.52 .. 6.48
  for (int y = 0; y < kRawSize; ++y) {
    for (int x = 0; x < kRawSize; ++x) {
      const real d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      real v = 0.08 + amp * std::exp(-d2 / (2.0 * sigma * sigma));
      if (v > 1.0) v = 1.0;
      img[static_cast<std::size_t>(y) * kRawSize + x] = v;
    }
  }
  return img;
}

struct SynthItem {
  LabeledImage sample;
  SynthLatents latents;
};

inline std::vector<SynthItem> synth_dataset_with_latents(int n, std::uint64_t seed) {
  if (n < 1) throw ValueError("synthetic dataset needs n >= 1");
  std::vector<SynthItem> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 0x73796e7468ULL, static_cast<std::uint64_t>(i)));
    SynthItem item;
    item.latents.z1 = rng.uniform(-0.9, 0.9);
    item.latents.z2 = rng.uniform(-0.9, 0.9);
    item.sample.image = render_synth_image(item.latents);
    item.sample.valence = item.latents.z1;
    item.sample.arousal = item.latents.z2;
    item.sample.expression = expression_from_latents(item.latents.z1, item.latents.z2);
    out.push_back(std::move(item));
  }
  return out;
}

inline Dataset synth_dataset(int n, std::uint64_t seed) {
  Dataset out;
  for (auto& item : synth_dataset_with_latents(n, seed)) out.push_back(std::move(item.sample));
  return out;
}

// Adversarial label noise: the chosen fraction of samples has both regression
// targets replaced by a draw from the opposite sign hemisphere. Expression
// labels stay clean.
inline void corrupt_regression_labels(Dataset& data, real fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ValueError("corruption fraction outside [0,1]");
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng(derive_seed(seed, 0x636f727275707421ULL, i));
    if (!rng.bernoulli(fraction)) continue;
    const real mv = rng.uniform(0.85, 1.0);
    const real ma = rng.uniform(0.85, 1.0);
    data[i].valence = data[i].valence >= 0.0 ? -mv : mv;
    data[i].arousal = data[i].arousal >= 0.0 ? -ma : ma;
  }
}

// ---------------------------------------------------------------------------
// Export / import in the manifest + PNG layout
// ---------------------------------------------------------------------------

inline void export_dataset(const std::string& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest in: " + dir);
  manifest << "image_path,valence,arousal,expression\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(kRawSize) * kRawSize);
  char name[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const LabeledImage& item = data[i];
    if (item.image.shape() != Shape{1, kRawSize, kRawSize})
      throw ShapeError("export expects [1,56,56] images, got " + shape_str(item.image.shape()));
    for (std::size_t p = 0; p < buf.size(); ++p) {
      real v = item.image[p];
      if (v < 0.0) v = 0.0;
      if (v > 1.0) v = 1.0;
      buf[p] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    std::snprintf(name, sizeof(name), "img_%06zu.png", i);
    write_png_gray((fs::path(dir) / name).string(), buf.data(), kRawSize, kRawSize);
    char row[160];
    std::snprintf(row, sizeof(row), "%s,%.9f,%.9f,", name, item.valence, item.arousal);
    manifest << row;
    if (item.expression < 0)
      manifest << "unlabeled\n";
    else
      manifest << item.expression << "\n";
  }
}

// Loads every manifest entry and preprocesses its image. Row errors from the
// manifest are fatal here: training inputs must be fully validated.
inline Dataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const ManifestLoad mf = load_manifest(manifest_path);
  if (!mf.row_errors.empty()) {
    std::string msg = "manifest has " + std::to_string(mf.row_errors.size()) + " bad row(s): ";
    msg += mf.row_errors.front();
    throw ValueError(msg);
  }
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset out;
  out.reserve(mf.entries.size());
  for (const ManifestEntry& e : mf.entries) {
    fs::path p(e.image_path);
    if (p.is_relative()) p = base / p;
    LabeledImage item;
    item.image = load_and_preprocess(p.string());
    item.valence = e.valence;
    item.arousal = e.arousal;
    item.expression = e.expression;
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace affect
