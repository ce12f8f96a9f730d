#pragma once

// Forward compositions around a grid-to-grid transform (e.g. a
// segmentation network), plus softmax/argmax and Dice scoring.
//
//   forward_resampled: pull inputs onto the label grid, transform there.
//   forward_resliced:  pull inputs onto a common space, transform, pull the
//                      output onto the label grid.
//   forward_splat:     push inputs (and their count images) onto the common
//                      space, transform, pull logits onto the label grid,
//                      softmax.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "splat/errors.hpp"
#include "splat/gridops.hpp"
#include "splat/volume.hpp"

namespace splat {

struct Subject {
    std::string id;
    std::vector<Volume> channels;  // native-space modalities
    Volume labels;                 // native label map, kind == labels

    int channel_count() const {
        int c = 0;
        for (const auto& v : channels) c += v.channels();
        return c;
    }

    void validate() const {
        if (channels.empty()) throw GeometryError("subject '" + id + "': no input channels");
        if (!labels.is_labels()) throw GeometryError("subject '" + id + "': labels must be a label volume");
        for (const auto& v : channels) {
            if (v.grid().dim() != labels.grid().dim()) {
                throw GeometryError("subject '" + id + "': channels and labels differ in dimensionality");
            }
        }
    }
};

/// Black-box map from a multi-channel volume to a K-channel volume on the
/// same grid. Must be safe to call concurrently if subjects are processed
/// concurrently.
struct GridTransform {
    std::function<Volume(const Volume&)> fn;
    int input_channels = 0;
    int output_classes = 0;

    Volume operator()(const Volume& in) const {
        if (in.channels() != input_channels) {
            throw GeometryError("transform expects " + std::to_string(input_channels) +
                                " input channels, got " + std::to_string(in.channels()));
        }
        Volume out = fn(in);
        if (!(out.grid() == in.grid()) || out.channels() != output_classes) {
            throw GeometryError("transform must return " + std::to_string(output_classes) +
                                " channels on its input grid");
        }
        return out;
    }
};

/// Network input on the common space: [push(f_1), count_1, push(f_2), count_2, ...].
struct AssembledInput {
    GridSpec space;
    Volume tensor;
};

inline AssembledInput assemble_splat(const Subject& subject, const GridSpec& space,
                                     const Execution& exec = {}) {
    if (subject.channels.empty()) throw GeometryError("assemble_splat: no input channels");
    const auto n = static_cast<std::size_t>(space.voxel_count());
    std::vector<double> data;
    data.reserve(2 * n * static_cast<std::size_t>(subject.channel_count()));
    for (const auto& modality : subject.channels) {
        if (modality.grid().dim() != space.dim()) {
            throw GeometryError(detail::dim_message("assemble_splat", modality.grid().dim(), space.dim()));
        }
        const PushResult pushed = push(modality, space, exec);
        for (int c = 0; c < modality.channels(); ++c) {
            const auto ch = pushed.pushed.channel(c);
            const auto count = pushed.count.channel(0);
            data.insert(data.end(), ch.begin(), ch.end());
            data.insert(data.end(), count.begin(), count.end());
        }
    }
    const int channels = 2 * subject.channel_count();
    return {space, Volume(space, channels, std::move(data))};
}

namespace detail {

inline Volume pull_all(const std::vector<Volume>& parts, const GridSpec& target, const Execution& exec) {
    std::vector<Volume> pulled;
    pulled.reserve(parts.size());
    for (const auto& p : parts) pulled.push_back(pull(p, target, exec));
    return stack_channels<double>(pulled);
}

} // namespace detail

struct ResampledForward {
    Volume prediction;  // K channels on the label grid
    Volume target;      // native labels, untouched
};

/// Baseline: every input resampled onto the label grid before the transform.
inline ResampledForward forward_resampled(const Subject& subject, const GridTransform& transform,
                                          const Execution& exec = {}) {
    subject.validate();
    const Volume input = detail::pull_all(subject.channels, subject.labels.grid(), exec);
    return {transform(input), subject.labels};
}

/// Inputs re-sliced onto `space`, output resampled onto the label grid.
inline Volume forward_resliced(const Subject& subject, const GridTransform& transform,
                               const GridSpec& space, const Execution& exec = {}) {
    subject.validate();
    const Volume input = detail::pull_all(subject.channels, space, exec);
    return pull(transform(input), subject.labels.grid(), exec);
}

/// Channel-wise softmax, max-shifted for stability.
inline Volume softmax(const Volume& logits) {
    const int k = logits.channels();
    const auto n = static_cast<std::size_t>(logits.voxel_count());
    Volume out(logits.grid(), k);
    const auto in = logits.data();
    auto res = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) mx = std::max(mx, in[static_cast<std::size_t>(c) * n + i]);
        double sum = 0.0;
        for (int c = 0; c < k; ++c) {
            const double e = std::exp(in[static_cast<std::size_t>(c) * n + i] - mx);
            res[static_cast<std::size_t>(c) * n + i] = e;
            sum += e;
        }
        for (int c = 0; c < k; ++c) res[static_cast<std::size_t>(c) * n + i] /= sum;
    }
    return out;
}

struct SplatForward {
    Volume logits;         // K channels on the label grid
    Volume probabilities;  // softmax(logits)
};

/// Splat-based forward pass. Label voxels outside the reach of the common
/// space (zero pull support) get +1 on the class-0 logit, so they lean
/// towards background.
inline SplatForward forward_splat(const Subject& subject, const GridTransform& transform,
                                  const GridSpec& space, const Execution& exec = {}) {
    subject.validate();
    if (transform.output_classes < 2) throw GeometryError("forward_splat: need at least 2 classes");
    const AssembledInput input = assemble_splat(subject, space, exec);
    const GridSpec& label_grid = subject.labels.grid();
    Volume logits = pull(transform(input.tensor), label_grid, exec);

    const Volume support = pull(Volume::filled(space, 1, 1.0), label_grid, exec);
    auto background = logits.channel(0);
    const auto s = support.channel(0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == 0.0) background[i] += 1.0;
    }
    Volume probabilities = softmax(logits);
    return {std::move(logits), std::move(probabilities)};
}

/// Per-voxel argmax over channels; ties go to the lowest channel index.
inline Volume hard_labels(const Volume& soft) {
    const int k = soft.channels();
    if (k < 2) throw GeometryError("hard_labels: need at least 2 channels");
    const auto n = static_cast<std::size_t>(soft.voxel_count());
    std::vector<double> labels(n);
    const auto in = soft.data();
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double best_value = in[i];
        for (int c = 0; c < k; ++c) {
            const double v = in[static_cast<std::size_t>(c) * n + i];
            if (!std::isfinite(v)) throw NumericalError("hard_labels: non-finite input");
            if (v > best_value) {
                best = c;
                best_value = v;
            }
        }
        labels[i] = best;
    }
    return Volume(soft.grid(), 1, std::move(labels), VolumeKind::labels);
}

struct ClassScore {
    int label;
    double score;
};

/// Dice overlap per foreground class 1..K-1. A class absent from both maps
/// scores 1.
inline std::vector<ClassScore> dice(const Volume& pred, const Volume& target, int classes) {
    if (!(pred.grid() == target.grid())) throw GeometryError("dice: label maps are on different grids");
    if (pred.channels() != 1 || target.channels() != 1) {
        throw GeometryError("dice: label maps must have a single channel");
    }
    if (classes < 1) throw GeometryError("dice: number of classes must be positive");
    std::vector<std::int64_t> both(static_cast<std::size_t>(classes), 0);
    std::vector<std::int64_t> in_pred(static_cast<std::size_t>(classes), 0);
    std::vector<std::int64_t> in_target(static_cast<std::size_t>(classes), 0);
    auto as_label = [classes](double v) {
        if (!(v >= 0.0) || v >= classes || std::floor(v) != v) {
            throw GeometryError("dice: label " + std::to_string(v) + " outside [0, " +
                                std::to_string(classes) + ")");
        }
        return static_cast<std::size_t>(v);
    };
    const auto a = pred.data();
    const auto b = target.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto la = as_label(a[i]);
        const auto lb = as_label(b[i]);
        ++in_pred[la];
        ++in_target[lb];
        if (la == lb) ++both[la];
    }
    std::vector<ClassScore> scores;
    for (int k = 1; k < classes; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        const auto denom = in_pred[uk] + in_target[uk];
        const double s = denom == 0 ? 1.0 : 2.0 * static_cast<double>(both[uk]) / static_cast<double>(denom);
        scores.push_back({k, s});
    }
    return scores;
}

inline double median_score(const std::vector<ClassScore>& scores) {
    if (scores.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> v;
    for (const auto& s : scores) v.push_back(s.score);
    std::sort(v.begin(), v.end());
    const auto mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

} // namespace splat
