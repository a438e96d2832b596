/* vdc - video description with temporal attention.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vdc/errors.hpp"
#include "vdc/graph.hpp"
#include "vdc/params.hpp"
#include "vdc/rng.hpp"
#include "vdc/tensor.hpp"

namespace vdc {

/// Geometry and switches of the motion encoder: three conv3d+ReLU+maxpool
/// stages over W x H x T x C descriptor grids, plus an optional
/// FC-ReLU-dropout classifier with one softmax head per recognition task.
/// Caption extraction uses only the convolutional stages.
struct EncoderConfig {
  std::size_t channels_in = 99;  // descriptor histogram channels
  std::size_t stage1_channels = 16;
  std::size_t stage2_channels = 32;
  std::size_t d_motion = 352;  // final conv channels, the motion vector width

  // Classifier head; active when task_classes is nonempty. The head's input
  // width is fixed by the training grid geometry below.
  std::vector<std::size_t> task_classes;
  std::size_t fc_dim = 2500;
  double head_dropout = 0.5;
  std::size_t grid_w = 15;
  std::size_t grid_h = 15;
  std::size_t grid_t = 120;

  void validate() const {
    if (channels_in == 0 || stage1_channels == 0 || stage2_channels == 0 || d_motion == 0) {
      throw ConfigError("encoder channel counts must be positive");
    }
    if (!task_classes.empty()) {
      if (fc_dim == 0) throw ConfigError("classifier head requires fc_dim > 0");
      if (head_dropout < 0.0 || head_dropout >= 1.0) {
        throw ConfigError("head_dropout must be in [0, 1)");
      }
      for (std::size_t c : task_classes) {
        if (c < 2) throw ConfigError("every task needs at least 2 classes");
      }
      if (grid_w == 0 || grid_h == 0 || grid_t == 0) {
        throw ConfigError("classifier head requires a training grid geometry");
      }
    }
  }
};

// Extent after one 2x2x2 maxpool (window 2, stride 2); the stage is named in
// the error so an undersized grid is diagnosed precisely.
inline std::size_t pooled_extent(std::size_t e, int stage, const char* axis) {
  if (e < 2) {
    throw DimensionError("conv stage " + std::to_string(stage) + " needs extent >= 2 on the " +
                         axis + " axis, got " + std::to_string(e));
  }
  return (e - 2) / 2 + 1;
}

/// The three-stage 3-D convolutional motion encoder. As elsewhere, methods
/// build nodes on a caller supplied graph against bound parameters.
template <class T>
class Conv3dEncoder {
 public:
  using Id = typename Graph<T>::Id;

  explicit Conv3dEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const EncoderConfig& config() const { return cfg_; }

  // Channel progression through the three stages.
  std::array<std::size_t, 4> stage_channels() const {
    return {cfg_.channels_in, cfg_.stage1_channels, cfg_.stage2_channels, cfg_.d_motion};
  }

  // Flattened width of the conv stack output for the configured training
  // grid; this is the classifier FC input width.
  std::size_t head_input_width() const {
    std::size_t w = cfg_.grid_w;
    std::size_t h = cfg_.grid_h;
    std::size_t t = cfg_.grid_t;
    for (int s = 1; s <= 3; ++s) {
      w = pooled_extent(w, s, "width");
      h = pooled_extent(h, s, "height");
      t = pooled_extent(t, s, "time");
    }
    return w * h * t * cfg_.d_motion;
  }

  // Creation order fixes the initialization stream and checkpoint layout:
  // conv stages, then the head when configured.
  ParamStore<T> init_params(Rng& rng) const {
    ParamStore<T> ps;
    const auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout) {
      Tensor<T> k({3, 3, 3, cin, cout});
      init_glorot(k, 27 * cin, 27 * cout, rng);
      ps.add(name + "_w", std::move(k));
      ps.add(name + "_b", Tensor<T>::zeros({cout}));
    };
    const auto chans = stage_channels();
    conv("conv1", chans[0], chans[1]);
    conv("conv2", chans[1], chans[2]);
    conv("conv3", chans[2], chans[3]);
    if (!cfg_.task_classes.empty()) {
      const std::size_t flat = head_input_width();
      Tensor<T> fc({flat, cfg_.fc_dim});
      init_glorot(fc, flat, cfg_.fc_dim, rng);
      ps.add("fc_w", std::move(fc));
      ps.add("fc_b", Tensor<T>::zeros({cfg_.fc_dim}));
      for (std::size_t k = 0; k < cfg_.task_classes.size(); ++k) {
        const std::size_t classes = cfg_.task_classes[k];
        Tensor<T> hw({cfg_.fc_dim, classes});
        init_glorot(hw, cfg_.fc_dim, classes, rng);
        const std::string base = "head" + std::to_string(k);
        ps.add(base + "_w", std::move(hw));
        ps.add(base + "_b", Tensor<T>::zeros({classes}));
      }
    }
    return ps;
  }

  // Three conv3d (3x3x3, zero padded) + ReLU + 2x2x2 maxpool stages.
  Id conv_stack_forward(Graph<T>& g, const BoundParams<T>& p, Id grid) const {
    const Tensor<T>& tg = g.value(grid);
    if (tg.rank() != 4 || tg.shape[3] != cfg_.channels_in) {
      throw DimensionError("descriptor grid " + shape_str(tg.shape) + " does not match " +
                           std::to_string(cfg_.channels_in) + " input channels");
    }
    // Check the whole pooling schedule up front so the failing stage is
    // reported even though extents only shrink as stages run.
    std::size_t w = tg.shape[0];
    std::size_t h = tg.shape[1];
    std::size_t t = tg.shape[2];
    for (int s = 1; s <= 3; ++s) {
      w = pooled_extent(w, s, "width");
      h = pooled_extent(h, s, "height");
      t = pooled_extent(t, s, "time");
    }
    Id x = grid;
    for (int s = 1; s <= 3; ++s) {
      const std::string base = "conv" + std::to_string(s);
      x = g.conv3d(x, p[base + "_w"], p[base + "_b"]);
      x = g.relu(x);
      x = g.maxpool3d(x, {2, 2, 2}, {2, 2, 2});
    }
    return x;
  }

  // Collapses each temporal slice by spatial max, then aligns the T' slices
  // to n output slots: slot j reads slice round(j*(T'-1)/(n-1)), ties away
  // from zero. Output is an n x d_motion row matrix.
  Id temporal_vectors(Graph<T>& g, Id map, std::size_t n) const {
    if (n == 0) throw ContractError("temporal_vectors needs n >= 1");
    // Copy the extents: pushing nodes may reallocate and invalidate value().
    const Shape map_shape = g.value(map).shape;
    if (map_shape.size() != 4) {
      throw DimensionError("feature map must be rank-4, got " + shape_str(map_shape));
    }
    const std::size_t tp = map_shape[2];
    const std::size_t channels = map_shape[3];
    const Id pooled =
        g.maxpool3d(map, {map_shape[0], map_shape[1], 1}, {map_shape[0], map_shape[1], 1});
    const Id slices = g.reshape(pooled, {tp, channels});
    if (n == tp) return slices;
    std::vector<Id> rows;
    rows.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      rows.push_back(g.reshape(g.embed_lookup(slices, resample_index(j, tp, n)), {1, channels}));
    }
    return rows.size() == 1 ? rows[0] : g.concat(rows, 0);
  }

  static std::size_t resample_index(std::size_t slot, std::size_t tp, std::size_t n) {
    if (tp == 0) throw ContractError("resample over an empty slice range");
    if (n <= 1) return 0;
    const double pos = static_cast<double>(slot) * static_cast<double>(tp - 1) /
                       static_cast<double>(n - 1);
    return static_cast<std::size_t>(std::llround(pos));
  }

  // Motion row matrix for one grid, no gradient bookkeeping kept.
  Tensor<T> motion_vectors(const ParamStore<T>& params, const Tensor<T>& grid,
                           std::size_t n) const {
    Graph<T> g;
    const BoundParams<T> bp(g, params);
    const Id map = conv_stack_forward(g, bp, g.constant(grid));
    return g.value(temporal_vectors(g, map, n));
  }

  // Task logits through the FC-ReLU(-dropout) head; rank-1, ready for
  // nll_logits or softmax.
  Id head_logits(Graph<T>& g, const BoundParams<T>& p, Id map, std::size_t task,
                 Id dropout_mask = -1) const {
    if (cfg_.task_classes.empty()) {
      throw ModeError("classifier head requested but none is configured");
    }
    if (task >= cfg_.task_classes.size()) {
      throw IndexError("task " + std::to_string(task) + " out of range [0, " +
                       std::to_string(cfg_.task_classes.size()) + ")");
    }
    const Tensor<T>& tm = g.value(map);
    const std::size_t flat = tm.size();
    if (flat != head_input_width()) {
      throw DimensionError("feature map " + shape_str(tm.shape) +
                           " does not match the configured head input width " +
                           std::to_string(head_input_width()));
    }
    Id h = g.reshape(map, {std::size_t{1}, flat});
    h = g.relu(g.add_rowvec(g.matmul(h, p["fc_w"]), p["fc_b"]));
    if (dropout_mask >= 0) h = g.mul(h, dropout_mask);
    const std::string base = "head" + std::to_string(task);
    const Id logits = g.add_rowvec(g.matmul(h, p[base + "_w"]), p[base + "_b"]);
    return g.reshape(logits, {cfg_.task_classes[task]});
  }

  // Class probabilities for one grid under one task head; inference path, so
  // dropout is inactive.
  Tensor<T> classify_activity(const ParamStore<T>& params, const Tensor<T>& grid,
                              std::size_t task) const {
    Graph<T> g;
    const BoundParams<T> bp(g, params);
    const Id map = conv_stack_forward(g, bp, g.constant(grid));
    return g.value(g.softmax_rows(head_logits(g, bp, map, task)));
  }

  // Inverted-dropout mask for the FC layer, shaped to multiply its 1 x fc_dim
  // activation row.
  Tensor<T> make_head_mask(Rng& rng) const {
    Tensor<T> mask({std::size_t{1}, cfg_.fc_dim});
    const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg_.head_dropout));
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = rng.uniform() < cfg_.head_dropout ? T(0) : keep_scale;
    }
    return mask;
  }

 private:
  EncoderConfig cfg_;
};

// Joins the appearance stream with optional motion rows: v_i = appearance_i
// or concat(appearance_i, motion_i). Both streams must already be aligned to
// the same n slots.
template <class T>
Tensor<T> encode(const Tensor<T>& appearance, const Tensor<T>* motion = nullptr) {
  if (appearance.rank() != 2) {
    throw DimensionError("appearance sequence must be rank-2, got " + shape_str(appearance.shape));
  }
  if (motion == nullptr) return appearance;
  if (motion->rank() != 2) {
    throw DimensionError("motion rows must be rank-2, got " + shape_str(motion->shape));
  }
  if (motion->shape[0] != appearance.shape[0]) {
    throw DimensionError("appearance has " + std::to_string(appearance.shape[0]) +
                         " slots but motion has " + std::to_string(motion->shape[0]) +
                         "; the streams are misaligned");
  }
  const std::size_t n = appearance.shape[0];
  const std::size_t da = appearance.shape[1];
  const std::size_t dm = motion->shape[1];
  Tensor<T> out({n, da + dm});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < da; ++j) out.at2(i, j) = appearance.at2(i, j);
    for (std::size_t j = 0; j < dm; ++j) out.at2(i, da + j) = motion->at2(i, j);
  }
  return out;
}

// Random spatial crop to the requested extents plus a fair-coin horizontal
// (width axis) flip. Draw order is fixed: width offset, height offset, time
// offset, flip coin.
template <class T>
Tensor<T> augment(const Tensor<T>& grid, std::size_t crop_w, std::size_t crop_h,
                  std::size_t crop_t, Rng& rng) {
  if (grid.rank() != 4) {
    throw DimensionError("descriptor grid must be rank-4, got " + shape_str(grid.shape));
  }
  if (crop_w == 0 || crop_h == 0 || crop_t == 0) throw ContractError("crop extents must be >= 1");
  if (crop_w > grid.shape[0] || crop_h > grid.shape[1] || crop_t > grid.shape[2]) {
    throw DimensionError("crop " + std::to_string(crop_w) + "x" + std::to_string(crop_h) + "x" +
                         std::to_string(crop_t) + " exceeds grid " + shape_str(grid.shape));
  }
  const std::size_t ow = static_cast<std::size_t>(rng.below(grid.shape[0] - crop_w + 1));
  const std::size_t oh = static_cast<std::size_t>(rng.below(grid.shape[1] - crop_h + 1));
  const std::size_t ot = static_cast<std::size_t>(rng.below(grid.shape[2] - crop_t + 1));
  const bool flip = rng.uniform() < 0.5;
  const std::size_t C = grid.shape[3];
  Tensor<T> out({crop_w, crop_h, crop_t, C});
  for (std::size_t w = 0; w < crop_w; ++w) {
    const std::size_t sw = flip ? ow + crop_w - 1 - w : ow + w;
    for (std::size_t h = 0; h < crop_h; ++h) {
      for (std::size_t t = 0; t < crop_t; ++t) {
        for (std::size_t c = 0; c < C; ++c) {
          out[out.idx4(w, h, t, c)] = grid[grid.idx4(sw, oh + h, ot + t, c)];
        }
      }
    }
  }
  return out;
}

}  // namespace vdc
