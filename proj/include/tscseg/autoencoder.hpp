#pragma once

// Fully-connected autoencoder that compresses raw visual feature vectors to a
// latent code. Hidden layers are rectified-linear; the latent and output
// layers are linear. Trained on mean-squared reconstruction error with
// RMSprop.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace tscseg {

struct AutoencoderConfig {
    std::size_t input_dim = 512;
    std::size_t latent_dim = 128;
    std::vector<std::size_t> encoder_hidden{256, 256, 448};
    std::vector<std::size_t> decoder_hidden{448, 256, 256};
    double learning_rate = 1e-3;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-8;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 200;
    std::size_t early_stop_patience = 20;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;
    bool relu = false;

    std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

struct AutoencoderModel {
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;
    std::vector<double> training_loss_history;
    std::vector<double> validation_loss_history;

    std::size_t input_dim() const { return encoder.empty() ? 0 : encoder.front().in_dim(); }
    std::size_t latent_dim() const { return encoder.empty() ? 0 : encoder.back().out_dim(); }
    std::size_t num_layers() const { return encoder.size() + decoder.size(); }
    const DenseLayer& layer(std::size_t i) const;
    DenseLayer& layer(std::size_t i);

    /// Checks that layer shapes chain and all parameters are finite.
    void validate() const;
};

/// Randomly initialized network (uniform He fan-in scaling, zero biases).
AutoencoderModel ae_init(const AutoencoderConfig& cfg);

/// Per-layer gradients, ordered encoder layers first then decoder layers.
struct AutoencoderGradients {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;
    double loss = 0.0;
};

/// Gradient of loss_scale * mean((reconstruction - x)^2) over every element of
/// the batch (rows are samples).
AutoencoderGradients ae_gradients(const AutoencoderModel& model, const Eigen::MatrixXd& batch,
                                  double loss_scale = 1.0);

/// Mean-squared reconstruction error over all elements of `data`.
double ae_loss(const AutoencoderModel& model, const Eigen::MatrixXd& data);

Eigen::VectorXd ae_encode(const AutoencoderModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
/// Rows in, rows out.
Eigen::MatrixXd ae_encode_batch(const AutoencoderModel& model, const Eigen::MatrixXd& rows);
Eigen::MatrixXd ae_reconstruct(const AutoencoderModel& model, const Eigen::MatrixXd& rows);

/// Accumulator state for RMSprop on a single parameter block.
struct RmsPropState {
    Eigen::ArrayXXd mean_square;
};

/// r <- decay*r + (1-decay)*g^2 ; p <- p - lr*g/sqrt(r + eps)
void rmsprop_update(Eigen::Ref<Eigen::ArrayXXd> param, const Eigen::ArrayXXd& grad, Eigen::ArrayXXd& mean_square,
                    double learning_rate, double decay, double epsilon);

using EpochCallback = std::function<void(std::size_t epoch, double train_loss, double val_loss)>;

/// Minibatch RMSprop training. The last `validation_fraction` of a seeded
/// shuffle is held out for early stopping; the best-validation checkpoint is
/// returned. Deterministic for a fixed seed.
AutoencoderModel ae_train(const Eigen::MatrixXd& data, const AutoencoderConfig& cfg,
                          const EpochCallback& on_epoch = {});

/// Seeded random search over learning rate and batch size, keeping the
/// config with the lowest best validation loss. `trials` of 0 returns `base`.
AutoencoderConfig ae_random_search(const Eigen::MatrixXd& data, const AutoencoderConfig& base, std::size_t trials,
                                   std::uint64_t seed);

}  // namespace tscseg
