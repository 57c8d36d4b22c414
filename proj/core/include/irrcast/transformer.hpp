#ifndef IRRCAST_TRANSFORMER_HPP
#define IRRCAST_TRANSFORMER_HPP

#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "irrcast/ncde.hpp"
#include "irrcast/optimizer.hpp"
#include "irrcast/positional.hpp"
#include "irrcast/revin.hpp"
#include "irrcast/tensor.hpp"
#include "irrcast/timeseries.hpp"

namespace irrcast {

struct ModelConfig {
    std::int64_t d_model = 32;
    std::int64_t n_heads = 4;
    std::int64_t encoder_depth = 2;
    std::int64_t decoder_depth = 1;
    std::int64_t feedforward_width = 64;
    std::int64_t label_len = 24;
    double dropout_rate = 0.05;
    PeMethodConfig pe;

    void validate() const;
};

/// Data-derived scales the PE variants need: the full series span (the NCDE
/// table axis and `simple` table span), the median observation gap
/// (irr-sinusoidal scale), and the pre-drop sampling interval (`simple`
/// grid resolution).
struct DataContext {
    double t_min = 0.0;
    double t_max = 1.0;
    double median_gap_seconds = 3600.0;
    double base_interval_seconds = 3600.0;

    TimeBase time_base() const { return TimeBase{t_min, t_max - t_min}; }
    double tau(double epoch_seconds) const {
        return (epoch_seconds - t_min) / (t_max - t_min);
    }
    static DataContext from_series(const IrregularSeries& series,
                                   double base_interval_seconds);
};

/// One model input: encoder stream of N past observations and decoder stream
/// of label_len warm-start rows followed by M zero-filled prediction slots.
struct ForecastBatch {
    std::vector<double> enc_times;
    std::vector<TimeFeatureVector> enc_features;
    std::vector<std::vector<double>> enc_values;   // raw, NaN = null

    std::vector<double> dec_times;
    std::vector<TimeFeatureVector> dec_features;
    std::vector<std::vector<double>> dec_values;   // label part raw; slots 0
    std::vector<std::vector<bool>> dec_observed;   // false on prediction slots

    std::vector<std::vector<double>> target_values; // M x l raw
    std::vector<std::vector<bool>> target_mask;     // M x l

    std::size_t horizon = 0;
    std::size_t label_len = 0;
};

ForecastBatch make_batch(const WindowPair& window, std::int64_t label_len);

// --- building blocks ------------------------------------------------------------

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    static AttentionParams init(std::int64_t d_model, Rng& rng);
    std::vector<Tensor> parameters() const { return {wq, bq, wk, bk, wv, bv, wo, bo}; }
};

struct FeedForwardParams {
    Tensor w1, b1, w2, b2;
    static FeedForwardParams init(std::int64_t d_model, std::int64_t width, Rng& rng);
    std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

struct LayerNormParams {
    Tensor gain, bias;
    static LayerNormParams init(std::int64_t d_model);
    std::vector<Tensor> parameters() const { return {gain, bias}; }
};

/// Scaled dot-product multi-head attention; queries come from `queries`,
/// keys/values from `memory` (self-attention passes the same tensor twice).
/// `additive_mask` (when given) is added to every head's score matrix.
/// When `head_weights` is non-null the per-head attention matrices are
/// appended to it.
Tensor multi_head_attention(const Tensor& queries, const Tensor& memory,
                            const AttentionParams& params, std::int64_t n_heads,
                            const Tensor* additive_mask = nullptr,
                            std::vector<Tensor>* head_weights = nullptr);

Tensor feed_forward(const Tensor& x, const FeedForwardParams& params);

/// Additive causal mask: 0 at or below the diagonal, -1e30 above.
Tensor causal_mask(std::int64_t n);

/// Mean squared error over masked-in entries; throws EmptyMask when no entry
/// is observed. Differentiable wrt pred.
Tensor mse_loss(const Tensor& pred, const std::vector<std::vector<double>>& target,
                const std::vector<std::vector<bool>>& mask);

// --- the forecaster ---------------------------------------------------------------

class Forecaster {
public:
    Forecaster(const ModelConfig& config, std::int64_t n_vars, const DataContext& data,
               std::uint64_t seed);

    /// Full pipeline: RevIN-normalize, token-embed, add PE, encode, decode,
    /// project, take the last M rows, RevIN-denormalize.
    Tensor forecast(const ForecastBatch& batch, bool training = false,
                    Rng* dropout_rng = nullptr) const;

    /// Differentiable masked MSE of forecast(batch) against the batch target.
    Tensor forecast_loss(const ForecastBatch& batch, bool training = false,
                         Rng* dropout_rng = nullptr) const;

    const ModelConfig& config() const { return config_; }
    const DataContext& data_context() const { return data_; }
    std::int64_t n_vars() const { return n_vars_; }

    std::vector<Tensor> parameters() const;
    /// Parameters the optimizer updates; excludes NCDE nets once frozen.
    std::vector<Tensor> trainable_parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

    // exposed pieces (probes + tests)
    Tensor token_embed_encoder(const ForecastBatch& batch, RevinStats& stats) const;
    Tensor encoder_forward(const Tensor& x0, bool training = false,
                           Rng* dropout_rng = nullptr) const;
    Tensor decoder_forward(const Tensor& x0, const Tensor& memory, bool training = false,
                           Rng* dropout_rng = nullptr) const;
    Tensor pe_rows_encoder(const ForecastBatch& batch) const;
    Tensor pe_rows_decoder(const ForecastBatch& batch) const;

    std::vector<Tensor> pe_parameters() const;

    // NCDE lifecycle
    bool uses_ncde() const { return config_.pe.method == PeMethod::Ncde; }
    bool ncde_frozen() const { return ncde_frozen_; }
    NcdeParams& ncde_encoder_params() { return pe_en_.ncde; }
    NcdeParams& ncde_decoder_params() { return pe_de_.ncde; }
    /// Freezes both NCDE nets and precomputes their embedding tables over the
    /// dataset span. resolution <= 0 picks a quarter of the median gap.
    void freeze_ncde_and_build_tables(double resolution = 0.0);
    const std::optional<PETable>& encoder_pe_table() const { return pe_en_.ncde_table; }
    const std::optional<PETable>& decoder_pe_table() const { return pe_de_.ncde_table; }

    void save_checkpoint(const std::string& path) const;
    static Forecaster load_checkpoint(const std::string& path);

    /// Snapshot / restore of all parameter values (best-epoch retention).
    std::vector<std::vector<double>> snapshot_values() const;
    void restore_values(const std::vector<std::vector<double>>& snapshot);

private:
    struct EncoderLayer {
        AttentionParams attn;
        LayerNormParams ln1, ln2;
        FeedForwardParams ff;
    };
    struct DecoderLayer {
        AttentionParams self_attn, cross_attn;
        LayerNormParams ln1, ln2, ln3;
        FeedForwardParams ff;
    };
    struct PeSideState {
        CtlpeParams ctlpe;
        UniformPeTables uniform;
        TimeFeaturePeParams time_feature;
        SimplePeTable simple;
        SimpleOverlapPeTable overlap;
        NcdeParams ncde;
        std::optional<PETable> ncde_table;
    };

    PeSideState init_pe_side(Rng& rng) const;
    Tensor pe_rows(const PeSideState& side, const std::vector<double>& times,
                   const std::vector<TimeFeatureVector>& features) const;
    std::vector<Tensor> pe_side_parameters(const PeSideState& side) const;
    Tensor token_embed(const Tensor& values_norm, const std::vector<std::vector<bool>>& observed,
                       const Tensor& w, const Tensor& b) const;

    ModelConfig config_;
    std::int64_t n_vars_;
    DataContext data_;

    Tensor revin_gain_, revin_bias_;
    Tensor token_w_en_, token_b_en_, token_w_de_, token_b_de_;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
    Tensor head_w_, head_b_;
    PeSideState pe_en_, pe_de_;
    bool ncde_frozen_ = false;
};

// --- training and evaluation ---------------------------------------------------------

struct TrainingConfig {
    int epochs = 10;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    int patience = 3;
    std::uint64_t seed = 0;
};

struct EpochLog {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;
    double val_mae = 0.0;
};

struct TrainingLog {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;
    double best_val_mse = std::numeric_limits<double>::infinity();
    bool early_stopped = false;
    // single-epoch NCDE pretraining diagnostics
    double ncde_first_batch_loss = std::numeric_limits<double>::quiet_NaN();
    double ncde_last_batch_loss = std::numeric_limits<double>::quiet_NaN();
    double ncde_max_field_grad_norm = 0.0;
};

struct EvalMetrics {
    double mse = 0.0;
    double mae = 0.0;
    std::size_t windows = 0;
};

/// One pass over the training windows with gradients flowing through the CDE
/// solver; records field-net gradient norms and first/last batch losses.
void ncde_pe_train_single_epoch(Forecaster& model, const std::vector<WindowPair>& train_windows,
                                Optimizer& optimizer, const TrainingConfig& cfg,
                                TrainingLog& log);

/// Epoch loop with minibatch Adam, per-epoch validation, early stopping on
/// validation MSE and best-checkpoint retention. NCDE models in single_epoch
/// mode get their PE pretrained, frozen and tabled first.
TrainingLog train(Forecaster& model, const std::vector<WindowPair>& train_windows,
                  const std::vector<WindowPair>& val_windows, const TrainingConfig& cfg);

/// Masked MSE/MAE on denormalized predictions, averaged over windows.
EvalMetrics evaluate(const Forecaster& model, const std::vector<WindowPair>& windows);

} // namespace irrcast

#endif // IRRCAST_TRANSFORMER_HPP
