#include "hsr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "hsr/csv.hpp"

namespace hsr {

using ad::Tape;
using ad::Tensor;

namespace {

void require_comparable(const Hypercube& rc, const Hypercube& gt, const Mask& mask) {
    if (rc.height() != gt.height() || rc.width() != gt.width() || rc.bands() != gt.bands()) {
        throw Error("metric: cube shapes differ");
    }
    if (!mask.matches(gt)) throw Error("metric: mask size differs from cube");
    if (mask.count() == 0) throw DegenerateMaskError("metric: mask has no foreground pixels");
}

// Calls f(rc, gt) for every foreground voxel and returns the voxel count.
template <class F>
std::size_t for_each_masked(const Hypercube& rc, const Hypercube& gt, const Mask& mask, F&& f) {
    require_comparable(rc, gt, mask);
    const std::size_t bands = gt.bands();
    std::size_t n = 0;
    for (std::size_t p = 0; p < gt.pixels(); ++p) {
        if (!mask[p]) continue;
        for (std::size_t b = 0; b < bands; ++b) f(rc.data()[p * bands + b], gt.data()[p * bands + b]);
        n += bands;
    }
    return n;
}

double squared_error_sum(const Hypercube& rc, const Hypercube& gt, const Mask& mask, std::size_t& n) {
    double s = 0.0;
    n = for_each_masked(rc, gt, mask, [&](double r, double g) { s += (r - g) * (r - g); });
    return s;
}

}  // namespace

double mrae(const Hypercube& rc, const Hypercube& gt, const Mask& mask, double floor) {
    double s = 0.0;
    const std::size_t n = for_each_masked(rc, gt, mask, [&](double r, double g) { s += std::abs(r - g) / std::max(g, floor); });
    return s / static_cast<double>(n);
}

double rmse_image(const Hypercube& rc, const Hypercube& gt, const Mask& mask) {
    std::size_t n = 0;
    const double s = squared_error_sum(rc, gt, mask, n);
    return std::sqrt(s / static_cast<double>(n));
}

double psnr(const Hypercube& rc, const Hypercube& gt, const Mask& mask, double peak) {
    if (!(peak > 0.0)) throw Error("psnr: peak must be positive");
    std::size_t n = 0;
    const double s = squared_error_sum(rc, gt, mask, n);
    if (s == 0.0) return kPsnrInfinity;
    return 10.0 * std::log10(peak * peak * static_cast<double>(n) / s);
}

double l1_error(const Hypercube& rc, const Hypercube& gt, const Mask& mask) {
    double s = 0.0;
    const std::size_t n = for_each_masked(rc, gt, mask, [&](double r, double g) { s += std::abs(r - g); });
    return s / static_cast<double>(n);
}

std::vector<double> cube_to_chw(const Hypercube& cube) {
    const std::size_t hw = cube.pixels(), bands = cube.bands();
    std::vector<double> out(hw * bands);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t b = 0; b < bands; ++b) out[b * hw + p] = cube.data()[p * bands + b];
    return out;
}

Hypercube chw_to_cube(std::span<const double> chw, std::size_t height, std::size_t width,
                      std::vector<double> wavelengths) {
    const std::size_t hw = height * width, bands = wavelengths.size();
    if (chw.size() != hw * bands) throw Error("chw_to_cube: buffer size does not match geometry");
    std::vector<double> data(hw * bands);
    for (std::size_t b = 0; b < bands; ++b)
        for (std::size_t p = 0; p < hw; ++p) data[p * bands + b] = chw[b * hw + p];
    return Hypercube(height, width, std::move(wavelengths), std::move(data));
}

std::vector<double> rgb_to_chw(const RgbImage& image) {
    const std::size_t hw = image.height * image.width;
    std::vector<double> out(3 * hw);
    for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < 3; ++c) out[c * hw + p] = image.pixels[p * 3 + c] / 255.0;
    return out;
}

ImagePair make_image_pair(const RgbImage& rgb, const Hypercube& gt, const Mask& mask) {
    if (rgb.height != gt.height() || rgb.width != gt.width()) throw Error("image pair: RGB and cube sizes differ");
    if (!mask.matches(gt)) throw Error("image pair: mask size differs from cube");
    ImagePair pair;
    pair.height = gt.height();
    pair.width = gt.width();
    pair.bands = gt.bands();
    pair.rgb = rgb_to_chw(rgb);
    pair.gt = cube_to_chw(gt);
    pair.mask = mask;
    return pair;
}

std::string to_string(LossKind kind) { return kind == LossKind::Mrae ? "MRAE" : "L1"; }

LossKind parse_loss(const std::string& name) {
    std::string n;
    for (char c : name) n.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (n == "MRAE") return LossKind::Mrae;
    if (n == "L1") return LossKind::L1;
    throw Error("unknown loss '" + name + "' (expected MRAE or L1)");
}

Tensor masked_loss(Tape& tape, const Tensor& prediction, std::span<const double> gt, const Mask& mask, LossKind kind) {
    if (prediction.rank() != 3) throw Error("masked_loss: prediction must be [bands,H,W]");
    const std::size_t bands = prediction.dim(0), hw = prediction.dim(1) * prediction.dim(2);
    if (gt.size() != prediction.numel()) throw Error("masked_loss: target size differs from prediction");
    if (mask.height() != prediction.dim(1) || mask.width() != prediction.dim(2)) {
        throw Error("masked_loss: mask size differs from prediction");
    }
    const std::size_t fg = mask.count();
    if (fg == 0) throw DegenerateMaskError("masked_loss: mask has no foreground pixels");
    std::vector<double> weights(gt.size(), 0.0);
    for (std::size_t b = 0; b < bands; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
            if (!mask[p]) continue;
            const std::size_t i = b * hw + p;
            weights[i] = kind == LossKind::Mrae ? 1.0 / std::max(gt[i], kMraeFloor) : 1.0;
        }
    }
    return ad::weighted_abs_error(tape, prediction, gt, weights, static_cast<double>(fg * bands));
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr, double beta1, double beta2, double eps) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw Error("adam_step: state holds a different parameter count");
    ++state.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& values = params[k].values();
        const auto& grad = params[k].grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != values.size() || (!grad.empty() && grad.size() != values.size())) {
            throw Error("adam_step: shape mismatch for parameter " + std::to_string(k));
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad.empty() ? 0.0 : grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
}

std::size_t grid_positions(std::size_t extent, std::size_t patch, std::size_t stride) {
    if (stride == 0) throw Error("patch stride must be positive");
    if (patch > extent) throw Error("patch size " + std::to_string(patch) + " exceeds image extent " + std::to_string(extent));
    return (extent - patch) / stride + 1;
}

std::vector<Patch> sample_patches(const ImagePair& pair, std::size_t patch, std::size_t stride, std::size_t count,
                                  Rng& rng) {
    if (patch == 0) throw Error("patch size must be positive");
    const std::size_t rows = grid_positions(pair.height, patch, stride);
    const std::size_t cols = grid_positions(pair.width, patch, stride);
    std::vector<std::pair<std::size_t, std::size_t>> corners;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            bool any = false;
            for (std::size_t y = r * stride; y < r * stride + patch && !any; ++y)
                for (std::size_t x = c * stride; x < c * stride + patch && !any; ++x) any = pair.mask.at(y, x);
            if (any) corners.emplace_back(r * stride, c * stride);
        }
    }
    if (corners.empty()) throw DegenerateMaskError("no patch position overlaps the foreground");

    std::uniform_int_distribution<std::size_t> pick(0, corners.size() - 1);
    const std::size_t hw = pair.height * pair.width, phw = patch * patch;
    std::vector<Patch> out;
    for (std::size_t n = 0; n < count; ++n) {
        const auto [top, left] = corners[pick(rng)];
        Patch p;
        p.top = top;
        p.left = left;
        p.size = patch;
        p.rgb.resize(3 * phw);
        p.gt.resize(pair.bands * phw);
        p.mask = Mask(patch, patch);
        for (std::size_t y = 0; y < patch; ++y) {
            for (std::size_t x = 0; x < patch; ++x) {
                const std::size_t src = (top + y) * pair.width + left + x, dst = y * patch + x;
                for (std::size_t c = 0; c < 3; ++c) p.rgb[c * phw + dst] = pair.rgb[c * hw + src];
                for (std::size_t b = 0; b < pair.bands; ++b) p.gt[b * phw + dst] = pair.gt[b * hw + src];
                p.mask.set(y, x, pair.mask[src]);
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

TrainConfig TrainConfig::for_architecture(Architecture arch) {
    TrainConfig c;
    if (arch == Architecture::Hrnet) {
        c.loss = LossKind::L1;
        c.beta1 = 0.5;
    }
    return c;
}

void TrainConfig::validate() const {
    if (batch_size == 0 || patch_size == 0 || stride == 0 || iterations_per_epoch == 0) {
        throw Error("train config: batch, patch, stride and iterations must be positive");
    }
    if (!(learning_rate > 0.0) || !(lr_decay > 0.0)) throw Error("train config: learning rate and decay must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw Error("train config: betas must lie in (0,1)");
}

std::optional<std::size_t> knee_point(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 3) return std::nullopt;
    std::vector<double> smooth(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1, hi = std::min(n - 1, i + 1);
        double s = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) s += values[j];
        smooth[i] = s / static_cast<double>(hi - lo + 1);
    }
    const auto [mn, mx] = std::minmax_element(smooth.begin(), smooth.end());
    if (*mx - *mn <= 0.0) return std::nullopt;
    std::size_t best = 0;
    double best_gap = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(n - 1);
        const double y = (smooth[i] - *mn) / (*mx - *mn);
        const double gap = (1.0 - x) - y;
        if (gap > best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

std::vector<double> predict_chw(const ReconNetwork& net, std::span<const double> rgb_chw, std::size_t height,
                                std::size_t width) {
    Tape tape;
    const Tensor x = Tensor::constant({3, height, width}, std::vector<double>(rgb_chw.begin(), rgb_chw.end()));
    return net.forward(tape, x).values();
}

Hypercube reconstruct(const ReconNetwork& net, const RgbImage& rgb, const std::vector<double>& wavelengths) {
    if (wavelengths.size() != net.spec().out_bands) throw Error("reconstruct: wavelength count differs from network output");
    const auto chw = predict_chw(net, rgb_to_chw(rgb), rgb.height, rgb.width);
    return chw_to_cube(chw, rgb.height, rgb.width, wavelengths);
}

ReconMetrics evaluate_predictions(const std::vector<std::vector<double>>& predictions,
                                  const std::vector<ImagePair>& pairs, double peak) {
    if (pairs.empty()) throw Error("evaluate: empty split");
    if (predictions.size() != pairs.size()) throw Error("evaluate: prediction count differs from pair count");
    ReconMetrics sum;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        std::vector<double> axis(p.bands);
        for (std::size_t b = 0; b < p.bands; ++b) axis[b] = static_cast<double>(b);
        const Hypercube rc = chw_to_cube(predictions[i], p.height, p.width, axis);
        const Hypercube gt = chw_to_cube(p.gt, p.height, p.width, axis);
        sum.mrae += mrae(rc, gt, p.mask);
        sum.rmse += rmse_image(rc, gt, p.mask);
        sum.psnr += psnr(rc, gt, p.mask, peak);
    }
    const double n = static_cast<double>(pairs.size());
    return {sum.mrae / n, sum.rmse / n, sum.psnr / n};
}

ReconMetrics evaluate(const ReconNetwork& net, const std::vector<ImagePair>& pairs, double peak) {
    std::vector<std::vector<double>> predictions;
    for (const auto& p : pairs) predictions.push_back(predict_chw(net, p.rgb, p.height, p.width));
    return evaluate_predictions(predictions, pairs, peak);
}

TrainHistory train(ReconNetwork& net, const std::vector<ImagePair>& training, const std::vector<ImagePair>& validation,
                   const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (config.epochs > 0 && training.empty()) throw Error("train: empty training split");
    const auto start = std::chrono::steady_clock::now();
    Rng rng(config.seed);
    std::uniform_int_distribution<std::size_t> pick_image(0, training.empty() ? 0 : training.size() - 1);
    std::vector<Tensor> params = net.params().tensors();
    AdamState adam;
    TrainHistory history;
    std::optional<double> best_val;
    std::vector<std::vector<double>> best_values;
    double lr = config.learning_rate;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (std::size_t it = 0; it < config.iterations_per_epoch; ++it) {
            net.params().zero_grad();
            Tape tape;
            std::vector<Tensor> losses;
            for (std::size_t b = 0; b < config.batch_size; ++b) {
                const ImagePair& pair = training[pick_image(rng)];
                Patch patch = sample_patches(pair, config.patch_size, config.stride, 1, rng).front();
                const Tensor x = Tensor::constant({3, patch.size, patch.size}, std::move(patch.rgb));
                const Tensor y = net.forward(tape, x);
                losses.push_back(masked_loss(tape, y, patch.gt, patch.mask, config.loss));
            }
            Tensor total = losses.front();
            for (std::size_t b = 1; b < losses.size(); ++b) total = ad::add(tape, total, losses[b]);
            const Tensor loss = ad::scale(tape, total, 1.0 / static_cast<double>(losses.size()));
            const double value = loss.item();
            if (!std::isfinite(value)) {
                std::ostringstream msg;
                msg << "non-finite training loss at epoch " << epoch + 1 << " iteration " << it + 1 << " (lr " << lr << ")";
                throw Error(msg.str());
            }
            tape.backward(loss);
            adam_step(params, adam, lr, config.beta1, config.beta2);
            loss_sum += value;
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.loss = loss_sum / static_cast<double>(config.iterations_per_epoch);
        rec.lr = lr;
        if (!validation.empty()) {
            rec.val_mrae = evaluate(net, validation).mrae;
            if (!best_val || *rec.val_mrae < *best_val) {
                best_val = rec.val_mrae;
                history.best_epoch = rec.epoch;
                best_values.clear();
                for (const auto& p : params) best_values.push_back(p.values());
            }
        }
        history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
        lr *= config.lr_decay;
    }
    if (!best_values.empty()) {
        for (std::size_t k = 0; k < params.size(); ++k) params[k].values() = best_values[k];
    }
    net.params().zero_grad();

    std::vector<double> curve;
    for (const auto& e : history.epochs) curve.push_back(e.loss);
    if (const auto knee = knee_point(curve)) history.knee_epoch = *knee + 1;
    history.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return history;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row({"epoch", "loss", "lr", "val_mrae"});
    for (const auto& e : history.epochs) {
        csv.row({std::to_string(e.epoch), format_number(e.loss), format_number(e.lr),
                 e.val_mrae ? format_number(*e.val_mrae) : std::string()});
    }
}

}  // namespace hsr
