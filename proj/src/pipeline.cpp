// SPDX-License-Identifier: Apache-2.0
#include "di2/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "di2/binio.hpp"
#include "di2/rng.hpp"

namespace di2 {

namespace {

// Seed streams; each stage owns one so that stages are independent.
enum Stream : std::uint64_t {
    kEncoderStream = 1,
    kProjRgbStream,
    kProjDepthStream,
    kTaskStream,
    kPolicyStream,
    kDcmStream,
    kMlpStream,
    kCodebookInitStream,
    kWarmupStream,
    kAlignStream,
    kCodebookStream,
    kFinetuneStream,
};

Tensor gaussian(Shape shape, Rng& rng, double stddev) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
    return Tensor(std::move(shape), std::move(v), true);
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

// Copies `width` floats per selected sample into one contiguous buffer.
std::vector<float> gather(const std::vector<float>& table, std::span<const std::size_t> ids,
                          std::size_t width) {
    std::vector<float> out(ids.size() * width);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.data() + ids[i] * width, width, out.data() + i * width);
    return out;
}

class Sgd {
public:
    // clip > 0 rescales the joint gradient to at most that L2 norm.
    Sgd(std::vector<Tensor> params, float lr, float momentum, float clip = 0.f)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), clip_(clip) {
        for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.f);
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        float scale = 1.f;
        if (clip_ > 0.f) {
            double sq = 0;
            for (const auto& p : params_)
                if (p.has_grad())
                    for (float g : p.grad()) sq += static_cast<double>(g) * g;
            const double norm = std::sqrt(sq);
            if (norm > clip_) scale = static_cast<float>(clip_ / norm);
        }
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            const auto g = p.grad();
            auto w = p.data();
            auto& v = velocity_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                v[j] = momentum_ * v[j] + scale * g[j];
                w[j] -= lr_ * v[j];
            }
        }
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> velocity_;
    float lr_, momentum_, clip_;
};

void require_samples(const SampleCache& cache, const char* who) {
    if (cache.samples == 0) throw ContractError(std::string(who) + ": dataset is empty");
}

void require_stage(const Model& m, Stage s, const char* who) {
    if (!m.has(s)) {
        throw StagingError(std::string(who) + ": model is at stage " + m.stage_tag() +
                           ", the warm-up stage must complete first");
    }
}

void check_finite(double loss, const char* stage, std::size_t epoch) {
    if (!std::isfinite(loss)) {
        throw DivergenceError(std::string(stage) + " diverged: non-finite loss at epoch " +
                              std::to_string(epoch));
    }
}

// Runs `epochs` passes of shuffled mini-batches; `batch_loss` returns the
// mean loss for the given sample ids and performs its own update.
template <class F>
TrainLog run_epochs(std::size_t samples, std::size_t batch_size, std::size_t epochs, Rng& rng,
                    const char* stage, F&& batch_loss) {
    TrainLog log;
    for (std::size_t e = 0; e < epochs; ++e) {
        const auto order = shuffled(samples, rng);
        double total = 0.0;
        for (std::size_t start = 0; start < samples; start += batch_size) {
            const std::size_t n = std::min(batch_size, samples - start);
            const std::span<const std::size_t> ids(order.data() + start, n);
            const double loss = batch_loss(ids);
            check_finite(loss, stage, e);
            total += loss * static_cast<double>(n);
        }
        log.epoch_loss.push_back(total / static_cast<double>(samples));
    }
    return log;
}

std::size_t dim(const Model& m) { return m.config.token_dim; }

// Tokens for every cached sample with the current (frozen) projections.
Tensor all_tokens(const Model& m, const std::vector<float>& feats, std::size_t samples, bool rgb) {
    return rgb ? rgb_tokens(m, feats, samples) : depth_tokens(m, feats, samples);
}

Tensor select_tokens(const Tensor& all, std::span<const std::size_t> ids) {
    const std::size_t width = all.dim(1) * all.dim(2);
    std::vector<float> out(ids.size() * width);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(all.data().data() + ids[i] * width, width, out.data() + i * width);
    return Tensor({ids.size(), all.dim(1), all.dim(2)}, std::move(out));
}

}  // namespace

template <class T>
BasicTensor<T> policy_forward(const BasicPolicy<T>& p, const BasicTensor<T>& task, const BasicTensor<T>& rgb,
                              const BasicTensor<T>& depth, const BasicTensor<T>& proprio,
                              BasicTensor<T>* weights) {
    const std::size_t b = task.dim(0), d = task.dim(1), q = p.queries(), k = rgb.dim(1);
    if (rgb.shape() != Shape{b, k, d} || depth.shape() != rgb.shape() || proprio.shape() != Shape{b, kProprioDim}) {
        throw DimensionError("policy_forward: token or proprioception shape mismatch");
    }
    const auto queries = ops::reshape(ops::matmul(task, p.query), {b, q, d});
    const auto keyed = ops::add(rgb, ops::repeat_batch(p.pos, b));
    const auto keys = ops::reshape(ops::matmul(ops::reshape(keyed, {b * k, d}), p.key), {b, k, d});
    const T inv = T(1) / std::sqrt(static_cast<T>(d));
    const auto w = ops::softmax_rows(ops::scale(ops::bmm(queries, ops::transpose_batched(keys)), inv));
    if (weights) *weights = w;
    const std::array<BasicTensor<T>, 4> parts{task, ops::reshape(ops::bmm(w, keyed), {b, q * d}),
                                              ops::reshape(ops::bmm(w, depth), {b, q * d}), proprio};
    const auto fused = ops::concat_cols<T>(parts);
    const auto h1 = ops::relu(ops::add_bias(ops::matmul(fused, p.w1), p.b1));
    const auto h2 = ops::relu(ops::add_bias(ops::matmul(h1, p.w2), p.b2));
    return ops::add_bias(ops::matmul(h2, p.w3), p.b3);
}

template <class T>
BasicTensor<T> warmup_loss(const BasicWarmupParams<T>& p, const BasicTensor<T>& rgb_feat,
                           const BasicTensor<T>& depth_feat, std::span<const std::size_t> tasks,
                           const BasicTensor<T>& proprio, const BasicTensor<T>& target, bool zero_depth) {
    const std::size_t b = tasks.size(), d = p.task_table.dim(1);
    const std::size_t tokens = rgb_feat.dim(0) / b;
    const auto rgb = ops::reshape(project(p.proj_rgb, rgb_feat), {b, tokens, d});
    const auto depth = zero_depth ? BasicTensor<T>::zeros({b, tokens, d})
                                  : ops::reshape(project(p.proj_depth, depth_feat), {b, tokens, d});
    const auto task = ops::gather_rows(p.task_table, tasks);
    return batch_squared_error(policy_forward(p.policy, task, rgb, depth, proprio), target);
}

gym::Action to_physical(std::span<const float> y) {
    return {y[0] * gym::kMaxDelta, y[1] * gym::kMaxDelta, y[2] * gym::kMaxDelta, y[3]};
}

std::array<float, 4> to_normalised(const gym::Action& a) {
    return {a[0] / gym::kMaxDelta, a[1] / gym::kMaxDelta, a[2] / gym::kMaxDelta, a[3]};
}

std::string Model::stage_tag() const {
    if (done()) return "DONE";
    if (has(kAlign)) return "ALIGN";
    if (has(kCodebook)) return "CODEBOOK";
    if (has(kWarmup)) return "WARMUP";
    return "INIT";
}

std::vector<std::pair<std::string, Tensor>> Model::named_arrays() const {
    std::vector<std::pair<std::string, Tensor>> out{
        {"encoder.weight", encoder.weight},
        {"proj_rgb.weight", warm.proj_rgb.weight},
        {"proj_rgb.bias", warm.proj_rgb.bias},
        {"proj_depth.weight", warm.proj_depth.weight},
        {"proj_depth.bias", warm.proj_depth.bias},
        {"task.table", warm.task_table},
        {"policy.query", warm.policy.query},
        {"policy.key", warm.policy.key},
        {"policy.pos", warm.policy.pos},
        {"policy.w1", warm.policy.w1},
        {"policy.b1", warm.policy.b1},
        {"policy.w2", warm.policy.w2},
        {"policy.b2", warm.policy.b2},
        {"policy.w3", warm.policy.w3},
        {"policy.b3", warm.policy.b3},
    };
    for (auto& nt : dcm.named()) out.push_back(nt);
    for (auto& nt : mlp.named()) out.push_back(nt);
    out.emplace_back("codebook.codes", codebook.codes);
    out.emplace_back("codebook.usage", Tensor({codebook.size()}, codebook.usage));
    return out;
}

std::map<std::string, std::uint64_t> Model::group_checksums() const {
    std::map<std::string, std::string> bytes;
    for (const auto& [name, t] : named_arrays()) {
        auto& buf = bytes[name.substr(0, name.find('.'))];
        binio::put_f32s(buf, t.data());
    }
    std::map<std::string, std::uint64_t> out;
    for (const auto& [group, buf] : bytes) out[group] = binio::fnv1a(buf);
    return out;
}

Model make_model(const ExperimentConfig& config) {
    config.validate();
    const std::size_t d0 = config.encoder_dim, d = config.token_dim;
    const std::size_t fused = d * (1 + 2 * config.policy_queries) + kProprioDim;
    auto seed = [&](Stream s) { return derive_seed(config.seed, s); };

    Model m;
    m.config = config;
    m.encoder = make_frozen_encoder(seed(kEncoderStream), d0);
    m.warm.proj_rgb = make_projection(d0, d, seed(kProjRgbStream));
    m.warm.proj_depth = make_projection(d0, d, seed(kProjDepthStream));
    {
        Rng rng(seed(kTaskStream));
        m.warm.task_table = gaussian({gym::kTaskCount, d}, rng, 1.0);
    }
    {
        Rng rng(seed(kPolicyStream));
        const std::size_t h = config.policy_hidden;
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
        m.warm.policy.query = gaussian({d, config.policy_queries * d}, rng, inv_sqrt_d);
        m.warm.policy.key = gaussian({d, d}, rng, inv_sqrt_d);
        m.warm.policy.pos = gaussian({kPatchCount, d}, rng, 0.5);
        m.warm.policy.w1 = gaussian({fused, h}, rng, 1.0 / std::sqrt(static_cast<double>(fused)));
        m.warm.policy.b1 = Tensor::zeros({h}, true);
        const double he = std::sqrt(2.0 / static_cast<double>(h));
        m.warm.policy.w2 = gaussian({h, h}, rng, he);
        m.warm.policy.b2 = Tensor::zeros({h}, true);
        m.warm.policy.w3 = gaussian({h, gym::kActionDim}, rng, 1.0 / std::sqrt(static_cast<double>(h)));
        m.warm.policy.b3 = Tensor::zeros({gym::kActionDim}, true);
    }
    m.tags = position_tags(kPatchCount, d, config.position_scale);
    m.dcm = make_dcm(DcmShape{kPatchCount, d, config.dcm_layers, config.ffn_mult}, seed(kDcmStream), m.tags);
    m.mlp = make_mlp_predictor(kPatchCount, d, config.mlp_hidden, seed(kMlpStream));
    m.codebook = make_codebook(config.codebook_size, d, config.codebook_lambda, seed(kCodebookInitStream));
    m.codebook.revival = config.codebook_revival;
    return m;
}

SampleCache build_cache(const Model& model, const std::vector<gym::Trajectory>& data) {
    SampleCache c;
    c.d0 = model.encoder.out_dim();
    std::vector<const gym::Step*> steps;
    for (std::size_t t = 0; t < data.size(); ++t)
        for (const auto& s : data[t].steps) {
            steps.push_back(&s);
            c.trajectory.push_back(t);
        }
    c.samples = steps.size();
    const std::size_t width = kPatchCount * c.d0;
    c.rgb.resize(c.samples * width);
    c.depth.resize(c.samples * width);
    c.tasks.resize(c.samples);
    c.proprio.resize(c.samples * kProprioDim);
    c.actions.resize(c.samples * gym::kActionDim);
    const auto n = static_cast<std::ptrdiff_t>(c.samples);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto& st = *steps[idx];
        const auto rgb = frozen_features(model.encoder, extract_patches(st.observation.rgb, 3));
        const auto depth = frozen_features(model.encoder, extract_patches(st.observation.depth, 1));
        std::copy(rgb.data().begin(), rgb.data().end(), c.rgb.begin() + idx * width);
        std::copy(depth.data().begin(), depth.data().end(), c.depth.begin() + idx * width);
        c.tasks[idx] = static_cast<std::size_t>(st.observation.task_id);
        std::copy_n(st.observation.proprio.begin(), kProprioDim, c.proprio.begin() + idx * kProprioDim);
        const auto a = to_normalised(st.action);
        std::copy(a.begin(), a.end(), c.actions.begin() + idx * gym::kActionDim);
    }
    return c;
}

TrainLog warmup_train(Model& model, const SampleCache& cache, const WarmupOptions& opts) {
    require_samples(cache, "warmup_train");
    const auto& cfg = model.config;
    const std::size_t width = kPatchCount * cache.d0;
    Sgd opt(model.warm.list(), opts.lr.value_or(cfg.warmup_lr), cfg.momentum);
    Rng rng(derive_seed(cfg.seed, kWarmupStream));
    auto log = run_epochs(cache.samples, cfg.batch_size, opts.epochs.value_or(cfg.warmup_epochs), rng,
                          "warm-up", [&](std::span<const std::size_t> ids) {
        const std::size_t b = ids.size();
        std::vector<std::size_t> tasks(b);
        for (std::size_t i = 0; i < b; ++i) tasks[i] = cache.tasks[ids[i]];
        const Tensor rgb({b * kPatchCount, cache.d0}, gather(cache.rgb, ids, width));
        const Tensor depth({b * kPatchCount, cache.d0}, gather(cache.depth, ids, width));
        const Tensor proprio({b, kProprioDim}, gather(cache.proprio, ids, kProprioDim));
        const Tensor target({b, gym::kActionDim}, gather(cache.actions, ids, gym::kActionDim));
        opt.zero_grad();
        const auto loss = warmup_loss(model.warm, rgb, depth, tasks, proprio, target, opts.zero_depth);
        const double value = loss.item();
        if (!std::isfinite(value)) return value;
        backward(loss);
        opt.step();
        return value;
    });
    opt.zero_grad();
    model.stages |= kWarmup;
    return log;
}

TrainLog align_train(Model& model, const SampleCache& cache) {
    require_stage(model, kWarmup, "align_train");
    require_samples(cache, "align_train");
    const auto& cfg = model.config;
    const Tensor rgb = all_tokens(model, cache.rgb, cache.samples, true);
    const Tensor depth = all_tokens(model, cache.depth, cache.samples, false);
    const bool use_dcm = cfg.depth_predictor == DepthPredictor::Dcm;

    std::vector<Tensor> params;
    for (const auto& [n, t] : use_dcm ? model.dcm.named() : model.mlp.named()) params.push_back(t);
    Sgd opt(params, cfg.align_lr, cfg.momentum, cfg.align_clip);
    Rng rng(derive_seed(cfg.seed, kAlignStream));
    auto log = run_epochs(cache.samples, cfg.batch_size, cfg.align_epochs, rng, "align",
                          [&](std::span<const std::size_t> ids) {
        const auto f_rgb = select_tokens(rgb, ids);
        const auto f_depth = select_tokens(depth, ids);
        opt.zero_grad();
        const auto loss =
            use_dcm ? align_loss(model.dcm, ops::add(f_rgb, ops::repeat_batch(model.tags, ids.size())), f_depth)
                    : mlp_align_loss(model.mlp, f_rgb, f_depth);
        const double value = loss.item();
        if (!std::isfinite(value)) return value;
        backward(loss);
        opt.step();
        return value;
    });
    opt.zero_grad();
    model.stages |= kAlign;
    return log;
}

TrainLog codebook_train(Model& model, const SampleCache& cache) {
    require_stage(model, kWarmup, "codebook_train");
    require_samples(cache, "codebook_train");
    const auto& cfg = model.config;
    const Tensor depth = all_tokens(model, cache.depth, cache.samples, false);
    const std::size_t d = dim(model);
    Rng rng(derive_seed(cfg.seed, kCodebookStream));
    auto log = run_epochs(cache.samples, cfg.batch_size, cfg.codebook_epochs, rng, "codebook",
                          [&](std::span<const std::size_t> ids) {
        const auto rows = select_tokens(depth, ids);
        const Tensor flat({ids.size() * kPatchCount, d}, rows.values());
        return codebook_train_step(model.codebook, flat, cfg.codebook_lr, rng).loss;
    });
    model.stages |= kCodebook;
    return log;
}

void reset_codebook(Model& model, std::size_t n_codes) {
    if (n_codes == 0) throw ContractError("reset_codebook: codebook must have at least one entry");
    model.config.codebook_size = n_codes;
    model.codebook = make_codebook(n_codes, dim(model), model.config.codebook_lambda,
                                   derive_seed(model.config.seed, kCodebookInitStream));
    model.stages &= ~static_cast<unsigned>(kCodebook);
}

TrainLog finetune_train(Model& model, const SampleCache& cache) {
    if (!model.done()) {
        throw StagingError("finetune_train: model is at stage " + model.stage_tag() + ", expected DONE");
    }
    require_samples(cache, "finetune_train");
    const auto& cfg = model.config;
    const Tensor rgb = all_tokens(model, cache.rgb, cache.samples, true);
    Tensor quantised;
    {
        NoGradGuard guard;
        quantised = quantize(model.codebook, predict_depth(model, rgb)).values;
    }
    const Tensor table = model.warm.task_table.clone();
    Sgd opt(model.warm.policy.list(), cfg.finetune_lr, cfg.momentum);
    Rng rng(derive_seed(cfg.seed, kFinetuneStream));
    auto log = run_epochs(cache.samples, cfg.batch_size, cfg.finetune_epochs, rng, "fine-tune",
                          [&](std::span<const std::size_t> ids) {
        std::vector<std::size_t> tasks(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) tasks[i] = cache.tasks[ids[i]];
        const Tensor proprio({ids.size(), kProprioDim}, gather(cache.proprio, ids, kProprioDim));
        const Tensor target({ids.size(), gym::kActionDim}, gather(cache.actions, ids, gym::kActionDim));
        opt.zero_grad();
        const auto out = policy_forward(model.warm.policy, ops::gather_rows(table, tasks), select_tokens(rgb, ids),
                                        select_tokens(quantised, ids), proprio);
        const auto loss = batch_squared_error(out, target);
        const double value = loss.item();
        if (!std::isfinite(value)) return value;
        backward(loss);
        opt.step();
        return value;
    });
    opt.zero_grad();
    model.stages |= kFinetune;
    return log;
}

void train_all(Model& model, const SampleCache& cache) {
    warmup_train(model, cache);
    if (model.config.stage_order == StageOrder::AlignFirst) {
        align_train(model, cache);
        codebook_train(model, cache);
    } else {
        codebook_train(model, cache);
        align_train(model, cache);
    }
    if (model.config.finetune_epochs > 0) finetune_train(model, cache);
}

std::string to_string(InferenceMode m) {
    switch (m) {
        case InferenceMode::Rgbd: return "RGBD";
        case InferenceMode::RgbOnly: return "RGB_ONLY";
        case InferenceMode::RgbOnlyNoDac: return "RGB_ONLY_NO_DAC";
        case InferenceMode::ZeroDepth: return "ZERO_DEPTH";
    }
    throw InternalError("unknown inference mode");
}

InferenceMode parse_mode(const std::string& s) {
    for (auto m : {InferenceMode::Rgbd, InferenceMode::RgbOnly, InferenceMode::RgbOnlyNoDac,
                   InferenceMode::ZeroDepth})
        if (to_string(m) == s) return m;
    throw ContractError("unknown inference mode: " + s);
}

Tensor rgb_tokens(const Model& model, std::span<const float> rgb_feat, std::size_t batch) {
    NoGradGuard guard;
    const Tensor f({batch * kPatchCount, model.encoder.out_dim()}, {rgb_feat.begin(), rgb_feat.end()});
    return ops::reshape(project(model.warm.proj_rgb, f), {batch, kPatchCount, dim(model)});
}

Tensor depth_tokens(const Model& model, std::span<const float> depth_feat, std::size_t batch) {
    NoGradGuard guard;
    const Tensor f({batch * kPatchCount, model.encoder.out_dim()}, {depth_feat.begin(), depth_feat.end()});
    return ops::reshape(project(model.warm.proj_depth, f), {batch, kPatchCount, dim(model)});
}

Tensor predict_depth(const Model& model, const Tensor& rgb_tok) {
    NoGradGuard guard;
    if (model.config.depth_predictor == DepthPredictor::Mlp) return mlp_forward(model.mlp, rgb_tok);
    return dcm_forward(model.dcm, ops::add(rgb_tok, ops::repeat_batch(model.tags, rgb_tok.dim(0))));
}

std::array<float, 4> policy_action(const Model& model, const Tensor& rgb_tok, const Tensor& depth_tok,
                                   const std::array<float, 3>& proprio, int task_id) {
    NoGradGuard guard;
    if (task_id < 0 || task_id >= gym::kTaskCount) {
        throw ContractError("task id out of range: " + std::to_string(task_id));
    }
    const std::array<std::size_t, 1> ids{static_cast<std::size_t>(task_id)};
    const Tensor pro({1, kProprioDim}, {proprio.begin(), proprio.end()});
    const auto out =
        policy_forward(model.warm.policy, ops::gather_rows(model.warm.task_table, ids), rgb_tok, depth_tok, pro);
    return {out.data()[0], out.data()[1], out.data()[2], out.data()[3]};
}

Tensor mode_depth_tokens(const Model& model, const Tensor& rgb_tok, InferenceMode mode,
                         const std::vector<float>* depth) {
    if ((mode == InferenceMode::Rgbd) != (depth != nullptr)) {
        throw ContractError(mode == InferenceMode::Rgbd ? "RGBD inference requires a depth raster"
                                                        : to_string(mode) + " inference must not receive depth");
    }
    switch (mode) {
        case InferenceMode::Rgbd:
            return depth_tokens(model, frozen_features(model.encoder, extract_patches(*depth, 1)).data(), 1);
        case InferenceMode::ZeroDepth:
            return Tensor::zeros(rgb_tok.shape());
        case InferenceMode::RgbOnlyNoDac:
            if (!model.has(kAlign)) throw StagingError("RGB_ONLY_NO_DAC needs a trained depth predictor");
            return predict_depth(model, rgb_tok);
        case InferenceMode::RgbOnly:
            if (!model.has(kAlign) || !model.has(kCodebook)) {
                throw StagingError("RGB_ONLY needs a trained depth predictor and codebook");
            }
            return quantize(model.codebook, predict_depth(model, rgb_tok)).values;
    }
    throw InternalError("unknown inference mode");
}

gym::Action infer_action(const Model& model, std::span<const float> rgb, const std::array<float, 3>& proprio,
                         int task_id, InferenceMode mode, const std::vector<float>* depth) {
    const auto feat = frozen_features(model.encoder, extract_patches(rgb, 3));
    const auto rgb_tok = rgb_tokens(model, feat.data(), 1);
    const auto depth_tok = mode_depth_tokens(model, rgb_tok, mode, depth);
    return to_physical(policy_action(model, rgb_tok, depth_tok, proprio, task_id));
}

gym::Action infer_action(const Model& model, const gym::Observation& obs, InferenceMode mode) {
    return infer_action(model, obs.rgb, obs.proprio, obs.task_id, mode,
                        mode == InferenceMode::Rgbd ? &obs.depth : nullptr);
}

#define DI2_INSTANTIATE_PIPELINE(T)                                                                     \
    template BasicTensor<T> policy_forward(const BasicPolicy<T>&, const BasicTensor<T>&,                \
                                           const BasicTensor<T>&, const BasicTensor<T>&,                \
                                           const BasicTensor<T>&, BasicTensor<T>*);                     \
    template BasicTensor<T> warmup_loss(const BasicWarmupParams<T>&, const BasicTensor<T>&,             \
                                        const BasicTensor<T>&, std::span<const std::size_t>,            \
                                        const BasicTensor<T>&, const BasicTensor<T>&, bool);

DI2_INSTANTIATE_PIPELINE(float)
DI2_INSTANTIATE_PIPELINE(double)

#undef DI2_INSTANTIATE_PIPELINE

}  // namespace di2
