#include "irrcast/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "irrcast/logging.hpp"

namespace irrcast {

using nlohmann::json;

void ModelConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0) throw BadConfig("d_model and n_heads must be positive");
    if (d_model % n_heads != 0) throw BadConfig("d_model must be divisible by n_heads");
    if (d_model % 2 != 0) throw BadConfig("d_model must be even (sinusoidal components)");
    if (encoder_depth < 0 || decoder_depth < 0) throw BadConfig("negative depth");
    if (feedforward_width <= 0) throw BadConfig("feedforward_width must be positive");
    if (label_len < 0) throw BadConfig("label_len must be nonnegative");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw BadConfig("dropout_rate in [0,1)");
    if (pe.d_model != d_model) throw BadConfig("pe.d_model must equal d_model");
}

DataContext DataContext::from_series(const IrregularSeries& series,
                                     double base_interval_seconds) {
    if (series.length() < 2) throw SeriesTooShort("DataContext needs >= 2 observations");
    DataContext d;
    d.t_min = series.timestamps.front();
    d.t_max = series.timestamps.back();
    d.median_gap_seconds = median_observation_gap(series);
    d.base_interval_seconds = base_interval_seconds;
    return d;
}

ForecastBatch make_batch(const WindowPair& window, std::int64_t label_len) {
    const auto n = static_cast<std::int64_t>(window.lookback());
    if (label_len > n) throw BadConfig("label_len exceeds lookback");
    const std::size_t l = window.past_values.front().size();

    ForecastBatch b;
    b.enc_times = window.past_times;
    b.enc_features = window.past_features;
    b.enc_values = window.past_values;
    b.horizon = window.horizon();
    b.label_len = static_cast<std::size_t>(label_len);

    const auto label_start = static_cast<std::size_t>(n - label_len);
    for (std::size_t i = label_start; i < window.lookback(); ++i) {
        b.dec_times.push_back(window.past_times[i]);
        b.dec_features.push_back(window.past_features[i]);
        b.dec_values.push_back(window.past_values[i]);
        std::vector<bool> obs(l);
        for (std::size_t v = 0; v < l; ++v) obs[v] = !is_null(window.past_values[i][v]);
        b.dec_observed.push_back(std::move(obs));
    }
    for (std::size_t i = 0; i < window.horizon(); ++i) {
        b.dec_times.push_back(window.future_times[i]);
        b.dec_features.push_back(window.future_features[i]);
        b.dec_values.push_back(std::vector<double>(l, 0.0)); // prediction slots are zero
        b.dec_observed.push_back(std::vector<bool>(l, false));
    }
    b.target_values = window.future_values;
    b.target_mask = window.target_mask;
    return b;
}

// --- building blocks ----------------------------------------------------------------

AttentionParams AttentionParams::init(std::int64_t d_model, Rng& rng) {
    AttentionParams p;
    auto zero_bias = [&]() {
        return Tensor::parameter({d_model},
                                 std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
    };
    p.wq = Tensor::xavier(d_model, d_model, rng);
    p.bq = zero_bias();
    p.wk = Tensor::xavier(d_model, d_model, rng);
    p.bk = zero_bias();
    p.wv = Tensor::xavier(d_model, d_model, rng);
    p.bv = zero_bias();
    p.wo = Tensor::xavier(d_model, d_model, rng);
    p.bo = zero_bias();
    return p;
}

FeedForwardParams FeedForwardParams::init(std::int64_t d_model, std::int64_t width, Rng& rng) {
    FeedForwardParams p;
    p.w1 = Tensor::xavier(d_model, width, rng);
    p.b1 = Tensor::parameter({width}, std::vector<double>(static_cast<std::size_t>(width), 0.0));
    p.w2 = Tensor::xavier(width, d_model, rng);
    p.b2 =
        Tensor::parameter({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
    return p;
}

LayerNormParams LayerNormParams::init(std::int64_t d_model) {
    LayerNormParams p;
    p.gain =
        Tensor::parameter({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 1.0));
    p.bias =
        Tensor::parameter({d_model}, std::vector<double>(static_cast<std::size_t>(d_model), 0.0));
    return p;
}

Tensor causal_mask(std::int64_t n) {
    std::vector<double> m(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = i + 1; j < n; ++j)
            m[static_cast<std::size_t>(i * n + j)] = -1e30;
    return Tensor::from({n, n}, std::move(m));
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& memory,
                            const AttentionParams& params, std::int64_t n_heads,
                            const Tensor* additive_mask, std::vector<Tensor>* head_weights) {
    if (queries.rank() != 2 || memory.rank() != 2 || queries.dim(1) != memory.dim(1))
        throw ShapeMismatch("attention: queries " + shape_str(queries.shape()) + " vs memory " +
                            shape_str(memory.shape()));
    const std::int64_t d = queries.dim(1);
    if (d % n_heads != 0) throw ShapeMismatch("attention: d_model % n_heads != 0");
    const std::int64_t dh = d / n_heads;

    Tensor q = add_rowvec(matmul(queries, params.wq), params.bq);
    Tensor k = add_rowvec(matmul(memory, params.wk), params.bk);
    Tensor v = add_rowvec(matmul(memory, params.wv), params.bv);

    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::int64_t h = 0; h < n_heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, dh);
        Tensor kh = slice_cols(k, h * dh, dh);
        Tensor vh = slice_cols(v, h * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        if (additive_mask) scores = add(scores, *additive_mask);
        Tensor attn = softmax(scores, 1);
        if (head_weights) head_weights->push_back(attn);
        heads.push_back(matmul(attn, vh));
    }
    Tensor ctx = concat_cols(heads);
    return add_rowvec(matmul(ctx, params.wo), params.bo);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& params) {
    Tensor h = relu(add_rowvec(matmul(x, params.w1), params.b1));
    return add_rowvec(matmul(h, params.w2), params.b2);
}

namespace {

Tensor dropout(const Tensor& x, double rate, bool training, Rng* rng) {
    if (!training || rate <= 0.0 || rng == nullptr) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    std::vector<double> mask(x.values().size());
    const double scale_up = 1.0 / (1.0 - rate);
    for (auto& m : mask) m = keep(*rng) ? scale_up : 0.0;
    return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

} // namespace

Tensor mse_loss(const Tensor& pred, const std::vector<std::vector<double>>& target,
                const std::vector<std::vector<bool>>& mask) {
    const auto rows = pred.dim(0);
    const auto cols = pred.dim(1);
    if (static_cast<std::int64_t>(target.size()) != rows ||
        static_cast<std::int64_t>(mask.size()) != rows)
        throw ShapeMismatch("mse_loss: row count");

    std::vector<double> tgt(static_cast<std::size_t>(rows * cols), 0.0);
    std::vector<double> msk(static_cast<std::size_t>(rows * cols), 0.0);
    std::size_t count = 0;
    for (std::int64_t i = 0; i < rows; ++i) {
        if (static_cast<std::int64_t>(target[static_cast<std::size_t>(i)].size()) != cols ||
            static_cast<std::int64_t>(mask[static_cast<std::size_t>(i)].size()) != cols)
            throw ShapeMismatch("mse_loss: column count");
        for (std::int64_t j = 0; j < cols; ++j) {
            if (!mask[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
            tgt[static_cast<std::size_t>(i * cols + j)] =
                target[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            msk[static_cast<std::size_t>(i * cols + j)] = 1.0;
            ++count;
        }
    }
    if (count == 0) throw EmptyMask("mse_loss: no observed target entries");

    Tensor diff = sub(pred, Tensor::from(pred.shape(), std::move(tgt)));
    Tensor sq = mul(diff, diff);
    Tensor masked = mul(sq, Tensor::from(pred.shape(), std::move(msk)));
    return scale(sum(masked), 1.0 / static_cast<double>(count));
}

// --- Forecaster -----------------------------------------------------------------------

Forecaster::Forecaster(const ModelConfig& config, std::int64_t n_vars, const DataContext& data,
                       std::uint64_t seed)
    : config_(config), n_vars_(n_vars), data_(data) {
    config_.validate();
    if (n_vars_ <= 0) throw BadConfig("n_vars must be positive");

    Rng rng(mix_seed(seed, 0x30de1ULL));
    const auto d = config_.d_model;

    revin_gain_ =
        Tensor::parameter({n_vars_}, std::vector<double>(static_cast<std::size_t>(n_vars_), 1.0));
    revin_bias_ =
        Tensor::parameter({n_vars_}, std::vector<double>(static_cast<std::size_t>(n_vars_), 0.0));

    token_w_en_ = Tensor::xavier(2 * n_vars_, d, rng);
    token_b_en_ = Tensor::parameter({d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));
    token_w_de_ = Tensor::xavier(2 * n_vars_, d, rng);
    token_b_de_ = Tensor::parameter({d}, std::vector<double>(static_cast<std::size_t>(d), 0.0));

    for (std::int64_t i = 0; i < config_.encoder_depth; ++i) {
        EncoderLayer layer;
        layer.attn = AttentionParams::init(d, rng);
        layer.ln1 = LayerNormParams::init(d);
        layer.ff = FeedForwardParams::init(d, config_.feedforward_width, rng);
        layer.ln2 = LayerNormParams::init(d);
        encoder_.push_back(std::move(layer));
    }
    for (std::int64_t i = 0; i < config_.decoder_depth; ++i) {
        DecoderLayer layer;
        layer.self_attn = AttentionParams::init(d, rng);
        layer.ln1 = LayerNormParams::init(d);
        layer.cross_attn = AttentionParams::init(d, rng);
        layer.ln2 = LayerNormParams::init(d);
        layer.ff = FeedForwardParams::init(d, config_.feedforward_width, rng);
        layer.ln3 = LayerNormParams::init(d);
        decoder_.push_back(std::move(layer));
    }

    head_w_ = Tensor::xavier(d, n_vars_, rng);
    head_b_ =
        Tensor::parameter({n_vars_}, std::vector<double>(static_cast<std::size_t>(n_vars_), 0.0));

    pe_en_ = init_pe_side(rng);
    pe_de_ = init_pe_side(rng);
}

Forecaster::PeSideState Forecaster::init_pe_side(Rng& rng) const {
    PeSideState side;
    const auto d = config_.d_model;
    switch (config_.pe.method) {
    case PeMethod::Ctlpe:
    case PeMethod::CtlpeNoBias:
        side.ctlpe = CtlpeParams::init(d, rng);
        break;
    case PeMethod::Sinusoidal:
    case PeMethod::IrrSinusoidal:
        break; // fixed, no parameters
    case PeMethod::Uniform:
        side.uniform = UniformPeTables::init(d, rng);
        break;
    case PeMethod::TimeFeature:
        side.time_feature = TimeFeaturePeParams::init(d, rng);
        break;
    case PeMethod::Simple: {
        const double res = config_.pe.grid_resolution > 0.0 ? config_.pe.grid_resolution
                                                            : data_.base_interval_seconds;
        side.simple = SimplePeTable::init(data_.t_min, data_.t_max, res, d, rng);
        break;
    }
    case PeMethod::SimpleOverlap:
        side.overlap = SimpleOverlapPeTable::init(config_.pe.max_len, d, rng);
        break;
    case PeMethod::Ncde: {
        NcdeConfig nc;
        nc.hidden_width = d;
        nc.channels = static_cast<std::int64_t>(TimeFeatureVector::kDim);
        nc.substeps = config_.pe.ncde_substeps;
        side.ncde = NcdeParams::init(nc, rng);
        break;
    }
    }
    return side;
}

Tensor Forecaster::pe_rows(const PeSideState& side, const std::vector<double>& times,
                           const std::vector<TimeFeatureVector>& features) const {
    const auto d = config_.d_model;
    switch (config_.pe.method) {
    case PeMethod::Ctlpe:
    case PeMethod::CtlpeNoBias: {
        std::vector<double> rel;
        rel.reserve(features.size());
        for (const auto& f : features) rel.push_back(f.relative_time);
        return ctlpe(rel, side.ctlpe, config_.pe.method == PeMethod::Ctlpe);
    }
    case PeMethod::Sinusoidal: {
        std::vector<std::int64_t> pos(times.size());
        std::iota(pos.begin(), pos.end(), 0);
        return sinusoidal_pe(pos, d);
    }
    case PeMethod::IrrSinusoidal: {
        const double scale = config_.pe.time_scale > 0.0 ? config_.pe.time_scale
                                                         : 1.0 / data_.median_gap_seconds;
        std::vector<double> rel(times.size());
        for (std::size_t i = 0; i < times.size(); ++i) rel[i] = times[i] - times.front();
        return irr_sinusoidal_pe(rel, d, scale);
    }
    case PeMethod::Uniform:
        return uniform_pe(features, side.uniform, d);
    case PeMethod::TimeFeature:
        return time_feature_pe(features, side.time_feature);
    case PeMethod::Simple:
        return simple_pe(times, side.simple);
    case PeMethod::SimpleOverlap:
        return simple_overlap_pe(times.size(), side.overlap);
    case PeMethod::Ncde: {
        std::vector<double> tau(times.size());
        for (std::size_t i = 0; i < times.size(); ++i) tau[i] = data_.tau(times[i]);
        if (side.ncde_table) {
            std::vector<double> flat;
            flat.reserve(tau.size() * static_cast<std::size_t>(d));
            for (double t : tau) {
                auto row = side.ncde_table->lookup(t);
                flat.insert(flat.end(), row.begin(), row.end());
            }
            return Tensor::from({static_cast<std::int64_t>(tau.size()), d}, std::move(flat));
        }
        return ncde_pe_forward(side.ncde, tau, features);
    }
    }
    throw BadConfig("pe_rows: unhandled method");
}

Tensor Forecaster::pe_rows_encoder(const ForecastBatch& batch) const {
    return pe_rows(pe_en_, batch.enc_times, batch.enc_features);
}

Tensor Forecaster::pe_rows_decoder(const ForecastBatch& batch) const {
    return pe_rows(pe_de_, batch.dec_times, batch.dec_features);
}

Tensor Forecaster::token_embed(const Tensor& values_norm,
                               const std::vector<std::vector<bool>>& observed, const Tensor& w,
                               const Tensor& b) const {
    const auto rows = values_norm.dim(0);
    const auto l = values_norm.dim(1);
    std::vector<double> ind(static_cast<std::size_t>(rows * l), 0.0);
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < l; ++j)
            if (observed[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
                ind[static_cast<std::size_t>(i * l + j)] = 1.0;
    Tensor ind_t = Tensor::from({rows, l}, std::move(ind));
    // zero-fill nulls in the value stream, indicator channel carries observedness
    Tensor masked_vals = mul(values_norm, ind_t);
    Tensor x = concat_cols({masked_vals, ind_t});
    return add_rowvec(matmul(x, w), b);
}

Tensor Forecaster::token_embed_encoder(const ForecastBatch& batch, RevinStats& stats) const {
    stats.gain = revin_gain_;
    stats.bias = revin_bias_;
    Tensor enc_norm = revin_normalize(batch.enc_values, stats);
    std::vector<std::vector<bool>> observed(batch.enc_values.size());
    for (std::size_t i = 0; i < batch.enc_values.size(); ++i) {
        observed[i].resize(batch.enc_values[i].size());
        for (std::size_t j = 0; j < batch.enc_values[i].size(); ++j)
            observed[i][j] = !is_null(batch.enc_values[i][j]);
    }
    return token_embed(enc_norm, observed, token_w_en_, token_b_en_);
}

Tensor Forecaster::encoder_forward(const Tensor& x0, bool training, Rng* dropout_rng) const {
    Tensor x = x0;
    for (const auto& layer : encoder_) {
        Tensor a = multi_head_attention(x, x, layer.attn, config_.n_heads);
        a = dropout(a, config_.dropout_rate, training, dropout_rng);
        x = layer_norm(add(x, a), layer.ln1.gain, layer.ln1.bias);
        Tensor f = feed_forward(x, layer.ff);
        f = dropout(f, config_.dropout_rate, training, dropout_rng);
        x = layer_norm(add(x, f), layer.ln2.gain, layer.ln2.bias);
    }
    return x;
}

Tensor Forecaster::decoder_forward(const Tensor& x0, const Tensor& memory, bool training,
                                   Rng* dropout_rng) const {
    Tensor x = x0;
    Tensor mask = causal_mask(x0.dim(0));
    for (const auto& layer : decoder_) {
        Tensor a = multi_head_attention(x, x, layer.self_attn, config_.n_heads, &mask);
        a = dropout(a, config_.dropout_rate, training, dropout_rng);
        x = layer_norm(add(x, a), layer.ln1.gain, layer.ln1.bias);
        Tensor c = multi_head_attention(x, memory, layer.cross_attn, config_.n_heads);
        c = dropout(c, config_.dropout_rate, training, dropout_rng);
        x = layer_norm(add(x, c), layer.ln2.gain, layer.ln2.bias);
        Tensor f = feed_forward(x, layer.ff);
        f = dropout(f, config_.dropout_rate, training, dropout_rng);
        x = layer_norm(add(x, f), layer.ln3.gain, layer.ln3.bias);
    }
    return x;
}

Tensor Forecaster::forecast(const ForecastBatch& batch, bool training, Rng* dropout_rng) const {
    RevinStats stats;
    Tensor enc_embed = token_embed_encoder(batch, stats);
    enc_embed = add(enc_embed, pe_rows_encoder(batch));
    Tensor memory = encoder_forward(enc_embed, training, dropout_rng);

    Tensor dec_norm = revin_standardize(stats, batch.dec_values);
    if (stats.gain.defined())
        dec_norm = add_rowvec(mul_rowvec(dec_norm, stats.gain), stats.bias);
    Tensor dec_embed = token_embed(dec_norm, batch.dec_observed, token_w_de_, token_b_de_);
    dec_embed = add(dec_embed, pe_rows_decoder(batch));
    Tensor dec_out = decoder_forward(dec_embed, memory, training, dropout_rng);

    Tensor proj = add_rowvec(matmul(dec_out, head_w_), head_b_);
    const auto total = proj.dim(0);
    Tensor pred_norm =
        slice_rows(proj, total - static_cast<std::int64_t>(batch.horizon),
                   static_cast<std::int64_t>(batch.horizon));
    return revin_denormalize(pred_norm, stats);
}

Tensor Forecaster::forecast_loss(const ForecastBatch& batch, bool training,
                                 Rng* dropout_rng) const {
    Tensor pred = forecast(batch, training, dropout_rng);
    return mse_loss(pred, batch.target_values, batch.target_mask);
}

std::vector<Tensor> Forecaster::pe_side_parameters(const PeSideState& side) const {
    switch (config_.pe.method) {
    case PeMethod::Ctlpe:
    case PeMethod::CtlpeNoBias: return side.ctlpe.parameters();
    case PeMethod::Sinusoidal:
    case PeMethod::IrrSinusoidal: return {};
    case PeMethod::Uniform: return side.uniform.parameters();
    case PeMethod::TimeFeature: return side.time_feature.parameters();
    case PeMethod::Simple: return side.simple.parameters();
    case PeMethod::SimpleOverlap: return side.overlap.parameters();
    case PeMethod::Ncde: return side.ncde.parameters();
    }
    return {};
}

std::vector<Tensor> Forecaster::pe_parameters() const {
    auto out = pe_side_parameters(pe_en_);
    auto de = pe_side_parameters(pe_de_);
    out.insert(out.end(), de.begin(), de.end());
    return out;
}

std::vector<Tensor> Forecaster::parameters() const {
    std::vector<Tensor> out = {revin_gain_, revin_bias_, token_w_en_, token_b_en_,
                               token_w_de_, token_b_de_};
    for (const auto& layer : encoder_) {
        for (auto& t : layer.attn.parameters()) out.push_back(t);
        for (auto& t : layer.ln1.parameters()) out.push_back(t);
        for (auto& t : layer.ff.parameters()) out.push_back(t);
        for (auto& t : layer.ln2.parameters()) out.push_back(t);
    }
    for (const auto& layer : decoder_) {
        for (auto& t : layer.self_attn.parameters()) out.push_back(t);
        for (auto& t : layer.ln1.parameters()) out.push_back(t);
        for (auto& t : layer.cross_attn.parameters()) out.push_back(t);
        for (auto& t : layer.ln2.parameters()) out.push_back(t);
        for (auto& t : layer.ff.parameters()) out.push_back(t);
        for (auto& t : layer.ln3.parameters()) out.push_back(t);
    }
    out.push_back(head_w_);
    out.push_back(head_b_);
    for (auto& t : pe_parameters()) out.push_back(t);
    return out;
}

std::vector<Tensor> Forecaster::trainable_parameters() const {
    if (!(uses_ncde() && ncde_frozen_)) return parameters();
    std::vector<Tensor> out = parameters();
    auto frozen = pe_parameters();
    auto is_frozen = [&frozen](const Tensor& t) {
        return std::any_of(frozen.begin(), frozen.end(),
                           [&t](const Tensor& f) { return f.data_ptr() == t.data_ptr(); });
    };
    out.erase(std::remove_if(out.begin(), out.end(), is_frozen), out.end());
    return out;
}

namespace {

void push_attn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               const AttentionParams& p) {
    out.emplace_back(prefix + ".wq", p.wq);
    out.emplace_back(prefix + ".bq", p.bq);
    out.emplace_back(prefix + ".wk", p.wk);
    out.emplace_back(prefix + ".bk", p.bk);
    out.emplace_back(prefix + ".wv", p.wv);
    out.emplace_back(prefix + ".bv", p.bv);
    out.emplace_back(prefix + ".wo", p.wo);
    out.emplace_back(prefix + ".bo", p.bo);
}

void push_ln(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
             const LayerNormParams& p) {
    out.emplace_back(prefix + ".gain", p.gain);
    out.emplace_back(prefix + ".bias", p.bias);
}

void push_ff(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
             const FeedForwardParams& p) {
    out.emplace_back(prefix + ".w1", p.w1);
    out.emplace_back(prefix + ".b1", p.b1);
    out.emplace_back(prefix + ".w2", p.w2);
    out.emplace_back(prefix + ".b2", p.b2);
}

} // namespace

std::vector<std::pair<std::string, Tensor>> Forecaster::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("revin.gain", revin_gain_);
    out.emplace_back("revin.bias", revin_bias_);
    out.emplace_back("token.encoder.w", token_w_en_);
    out.emplace_back("token.encoder.b", token_b_en_);
    out.emplace_back("token.decoder.w", token_w_de_);
    out.emplace_back("token.decoder.b", token_b_de_);
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        const std::string p = "encoder." + std::to_string(i);
        push_attn(out, p + ".attn", encoder_[i].attn);
        push_ln(out, p + ".ln1", encoder_[i].ln1);
        push_ff(out, p + ".ff", encoder_[i].ff);
        push_ln(out, p + ".ln2", encoder_[i].ln2);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const std::string p = "decoder." + std::to_string(i);
        push_attn(out, p + ".self", decoder_[i].self_attn);
        push_ln(out, p + ".ln1", decoder_[i].ln1);
        push_attn(out, p + ".cross", decoder_[i].cross_attn);
        push_ln(out, p + ".ln2", decoder_[i].ln2);
        push_ff(out, p + ".ff", decoder_[i].ff);
        push_ln(out, p + ".ln3", decoder_[i].ln3);
    }
    out.emplace_back("head.w", head_w_);
    out.emplace_back("head.b", head_b_);

    auto name_side = [&](const char* side_name, const PeSideState& side) {
        const std::string p = std::string("pe.") + side_name;
        switch (config_.pe.method) {
        case PeMethod::Ctlpe:
        case PeMethod::CtlpeNoBias:
            out.emplace_back(p + ".slope", side.ctlpe.slope);
            out.emplace_back(p + ".bias", side.ctlpe.bias);
            break;
        case PeMethod::Sinusoidal:
        case PeMethod::IrrSinusoidal: break;
        case PeMethod::Uniform:
            out.emplace_back(p + ".month", side.uniform.month);
            out.emplace_back(p + ".day", side.uniform.day);
            out.emplace_back(p + ".weekday", side.uniform.weekday);
            out.emplace_back(p + ".hour", side.uniform.hour);
            out.emplace_back(p + ".minute", side.uniform.minute);
            break;
        case PeMethod::TimeFeature:
            out.emplace_back(p + ".projection", side.time_feature.projection);
            out.emplace_back(p + ".bias", side.time_feature.bias);
            break;
        case PeMethod::Simple:
            out.emplace_back(p + ".table", side.simple.table);
            break;
        case PeMethod::SimpleOverlap:
            out.emplace_back(p + ".table", side.overlap.table);
            break;
        case PeMethod::Ncde:
            out.emplace_back(p + ".field_w1", side.ncde.field_w1);
            out.emplace_back(p + ".field_b1", side.ncde.field_b1);
            out.emplace_back(p + ".field_w2", side.ncde.field_w2);
            out.emplace_back(p + ".field_b2", side.ncde.field_b2);
            out.emplace_back(p + ".init_w", side.ncde.init_w);
            out.emplace_back(p + ".init_b", side.ncde.init_b);
            break;
        }
    };
    name_side("encoder", pe_en_);
    name_side("decoder", pe_de_);
    return out;
}

void Forecaster::freeze_ncde_and_build_tables(double resolution) {
    if (!uses_ncde()) return;
    double res = resolution;
    if (res <= 0.0) {
        // a quarter of the median gap, on the dataset-relative tau axis
        res = (data_.median_gap_seconds / (data_.t_max - data_.t_min)) / 4.0;
    }
    auto features_at = [this](double tau) {
        const double t = data_.t_min + tau * (data_.t_max - data_.t_min);
        return time_features(t, data_.t_min, data_.t_max, data_.time_base());
    };
    pe_en_.ncde_table = pe_table_build(pe_en_.ncde, 0.0, 1.0, res, features_at);
    pe_de_.ncde_table = pe_table_build(pe_de_.ncde, 0.0, 1.0, res, features_at);
    ncde_frozen_ = true;
}

std::vector<std::vector<double>> Forecaster::snapshot_values() const {
    std::vector<std::vector<double>> snap;
    for (const auto& p : parameters())
        snap.emplace_back(p.values().begin(), p.values().end());
    return snap;
}

void Forecaster::restore_values(const std::vector<std::vector<double>>& snapshot) {
    auto params = parameters();
    if (snapshot.size() != params.size())
        throw ShapeMismatch("restore_values: snapshot size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) params[i].set_values(snapshot[i]);
}

// --- checkpoint -------------------------------------------------------------------------

void Forecaster::save_checkpoint(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);

    json cfg;
    cfg["d_model"] = config_.d_model;
    cfg["n_heads"] = config_.n_heads;
    cfg["encoder_depth"] = config_.encoder_depth;
    cfg["decoder_depth"] = config_.decoder_depth;
    cfg["feedforward_width"] = config_.feedforward_width;
    cfg["label_len"] = config_.label_len;
    cfg["dropout_rate"] = config_.dropout_rate;
    cfg["pe_method"] = pe_method_to_string(config_.pe.method);
    cfg["pe_grid_resolution"] = config_.pe.grid_resolution;
    cfg["pe_max_len"] = config_.pe.max_len;
    cfg["pe_time_scale"] = config_.pe.time_scale;
    cfg["pe_ncde_train_mode"] = config_.pe.ncde_train_mode;
    cfg["pe_ncde_substeps"] = config_.pe.ncde_substeps;
    cfg["n_vars"] = n_vars_;
    cfg["data_t_min"] = data_.t_min;
    cfg["data_t_max"] = data_.t_max;
    cfg["data_median_gap"] = data_.median_gap_seconds;
    cfg["data_base_interval"] = data_.base_interval_seconds;
    cfg["ncde_frozen"] = ncde_frozen_;

    f << "irrcast-checkpoint v1\n";
    f << "config " << cfg.dump() << "\n";

    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& [name, t] : named_parameters()) {
        f << "param " << name << " " << t.rank();
        for (auto d : t.shape()) f << " " << d;
        f << "\n";
        bool first = true;
        for (double v : t.values()) {
            if (!first) f << " ";
            f << fmt(v);
            first = false;
        }
        f << "\n";
    }
    f << "end\n";
    if (!f) throw IoError("short write to " + path);
}

Forecaster Forecaster::load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line != "irrcast-checkpoint v1")
        throw ParseError("bad checkpoint header in " + path);
    if (!std::getline(f, line) || line.rfind("config ", 0) != 0)
        throw ParseError("missing config line in " + path);

    json cfg = json::parse(line.substr(7));
    ModelConfig mc;
    mc.d_model = cfg.at("d_model").get<std::int64_t>();
    mc.n_heads = cfg.at("n_heads").get<std::int64_t>();
    mc.encoder_depth = cfg.at("encoder_depth").get<std::int64_t>();
    mc.decoder_depth = cfg.at("decoder_depth").get<std::int64_t>();
    mc.feedforward_width = cfg.at("feedforward_width").get<std::int64_t>();
    mc.label_len = cfg.at("label_len").get<std::int64_t>();
    mc.dropout_rate = cfg.at("dropout_rate").get<double>();
    mc.pe.method = pe_method_from_string(cfg.at("pe_method").get<std::string>());
    mc.pe.d_model = mc.d_model;
    mc.pe.grid_resolution = cfg.at("pe_grid_resolution").get<double>();
    mc.pe.max_len = cfg.at("pe_max_len").get<std::int64_t>();
    mc.pe.time_scale = cfg.at("pe_time_scale").get<double>();
    mc.pe.ncde_train_mode = cfg.at("pe_ncde_train_mode").get<std::string>();
    mc.pe.ncde_substeps = cfg.at("pe_ncde_substeps").get<int>();

    DataContext data;
    data.t_min = cfg.at("data_t_min").get<double>();
    data.t_max = cfg.at("data_t_max").get<double>();
    data.median_gap_seconds = cfg.at("data_median_gap").get<double>();
    data.base_interval_seconds = cfg.at("data_base_interval").get<double>();

    Forecaster model(mc, cfg.at("n_vars").get<std::int64_t>(), data, /*seed=*/0);

    std::unordered_map<std::string, Tensor> by_name;
    for (auto& [name, t] : model.named_parameters()) by_name.emplace(name, t);

    while (std::getline(f, line)) {
        if (line == "end") break;
        std::istringstream hdr(line);
        std::string tag, name;
        std::int64_t rank;
        hdr >> tag >> name >> rank;
        if (tag != "param" || !hdr) throw ParseError("bad param header '" + line + "'");
        Shape shape(static_cast<std::size_t>(rank));
        for (auto& d : shape) hdr >> d;
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ParseError("unknown parameter '" + name + "'");
        if (it->second.shape() != shape)
            throw ShapeMismatch("checkpoint parameter '" + name + "' has shape " +
                                shape_str(shape) + ", model wants " +
                                shape_str(it->second.shape()));
        if (!std::getline(f, line)) throw ParseError("truncated values for '" + name + "'");
        std::istringstream vals(line);
        std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
        for (auto& x : v)
            if (!(vals >> x)) throw ParseError("short value row for '" + name + "'");
        it->second.set_values(v);
    }

    if (cfg.value("ncde_frozen", false)) model.freeze_ncde_and_build_tables();
    return model;
}

// --- training loop -------------------------------------------------------------------------

namespace {

double run_batch(Forecaster& model, const std::vector<WindowPair>& windows,
                 const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                 Rng& dropout_rng) {
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        ForecastBatch batch = make_batch(windows[order[i]], model.config().label_len);
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = model.forecast_loss(batch, /*training=*/true, &dropout_rng);
        const double lv = loss.item();
        if (!std::isfinite(lv)) throw NonFiniteLoss("batch loss is not finite");
        total += lv;
        Tensor scaled = scale(loss, inv);
        tape.backward(scaled);
    }
    return total * inv;
}

} // namespace

void ncde_pe_train_single_epoch(Forecaster& model, const std::vector<WindowPair>& train_windows,
                                Optimizer& optimizer, const TrainingConfig& cfg,
                                TrainingLog& log) {
    if (train_windows.empty()) return;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5c0ffULL));
    Rng dropout_rng(mix_seed(cfg.seed, 0xd201ULL));

    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    auto params = model.trainable_parameters();
    auto ncde_params = model.pe_parameters();

    bool first = true;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::size_t e = std::min(order.size(), b + cfg.batch_size);
        const double batch_loss = run_batch(model, train_windows, order, b, e, dropout_rng);
        double gn = 0.0;
        for (const auto& p : ncde_params) gn = std::max(gn, p.grad_norm());
        log.ncde_max_field_grad_norm = std::max(log.ncde_max_field_grad_norm, gn);
        optimizer.step(params);
        if (first) {
            log.ncde_first_batch_loss = batch_loss;
            first = false;
        }
        log.ncde_last_batch_loss = batch_loss;
    }
    log::info("ncde single-epoch pretraining: first batch loss " +
              std::to_string(log.ncde_first_batch_loss) + ", last batch loss " +
              std::to_string(log.ncde_last_batch_loss));
}

TrainingLog train(Forecaster& model, const std::vector<WindowPair>& train_windows,
                  const std::vector<WindowPair>& val_windows, const TrainingConfig& cfg) {
    if (train_windows.empty()) throw EmptyDataset("train: no training windows");

    TrainingLog log;
    Optimizer optimizer(OptimizerKind::Adam, cfg.learning_rate);

    if (model.uses_ncde() && model.config().pe.ncde_train_mode == "single_epoch" &&
        !model.ncde_frozen()) {
        ncde_pe_train_single_epoch(model, train_windows, optimizer, cfg, log);
        model.freeze_ncde_and_build_tables();
    }

    Rng shuffle_rng(mix_seed(cfg.seed, 0xe90c4ULL));
    Rng dropout_rng(mix_seed(cfg.seed, 0xd202ULL));
    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), 0);

    auto params = model.trainable_parameters();
    std::vector<std::vector<double>> best_snapshot = model.snapshot_values();
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            epoch_loss += run_batch(model, train_windows, order, b, e, dropout_rng);
            optimizer.step(params);
            ++batches;
        }
        epoch_loss /= static_cast<double>(std::max<std::size_t>(batches, 1));

        EvalMetrics val{};
        if (!val_windows.empty()) val = evaluate(model, val_windows);
        log.epochs.push_back({epoch, epoch_loss, val.mse, val.mae});
        log::debug("epoch " + std::to_string(epoch) + ": train " + std::to_string(epoch_loss) +
                   ", val " + std::to_string(val.mse));

        const double criterion = val_windows.empty() ? epoch_loss : val.mse;
        if (criterion < log.best_val_mse) {
            log.best_val_mse = criterion;
            log.best_epoch = epoch;
            best_snapshot = model.snapshot_values();
            epochs_since_best = 0;
        } else if (++epochs_since_best >= cfg.patience) {
            log.early_stopped = true;
            break;
        }
    }

    model.restore_values(best_snapshot);
    return log;
}

EvalMetrics evaluate(const Forecaster& model, const std::vector<WindowPair>& windows) {
    if (windows.empty()) throw EmptyDataset("evaluate: no windows");
    double mse_sum = 0.0, mae_sum = 0.0;
    std::size_t used = 0;
    for (const auto& w : windows) {
        ForecastBatch batch = make_batch(w, model.config().label_len);
        std::size_t count = 0;
        for (const auto& row : batch.target_mask)
            for (bool m : row)
                if (m) ++count;
        if (count == 0) continue; // fully-null target window contributes nothing
        Tensor pred = model.forecast(batch);
        double se = 0.0, ae = 0.0;
        for (std::size_t i = 0; i < batch.target_values.size(); ++i) {
            for (std::size_t j = 0; j < batch.target_values[i].size(); ++j) {
                if (!batch.target_mask[i][j]) continue;
                const double d = pred.at(static_cast<std::int64_t>(i),
                                         static_cast<std::int64_t>(j)) -
                                 batch.target_values[i][j];
                se += d * d;
                ae += std::abs(d);
            }
        }
        mse_sum += se / static_cast<double>(count);
        mae_sum += ae / static_cast<double>(count);
        ++used;
    }
    if (used == 0) throw EmptyDataset("evaluate: all target windows fully null");
    return {mse_sum / static_cast<double>(used), mae_sum / static_cast<double>(used), used};
}

} // namespace irrcast
