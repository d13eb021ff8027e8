#include "tscseg/autoencoder.hpp"

#include "tscseg/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace tscseg {

void AutoencoderConfig::validate() const {
    if (input_dim == 0 || latent_dim == 0) fail(ErrorCode::InvalidArgument, "autoencoder widths must be positive");
    if (latent_dim >= input_dim) fail(ErrorCode::InvalidArgument, "latent_dim must be smaller than input_dim");
    for (auto w : encoder_hidden)
        if (w == 0) fail(ErrorCode::InvalidArgument, "encoder hidden widths must be positive");
    for (auto w : decoder_hidden)
        if (w == 0) fail(ErrorCode::InvalidArgument, "decoder hidden widths must be positive");
    if (!(learning_rate > 0.0)) fail(ErrorCode::InvalidArgument, "learning_rate must be positive");
    if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) fail(ErrorCode::InvalidArgument, "rmsprop_decay in [0,1)");
    if (!(rmsprop_epsilon > 0.0)) fail(ErrorCode::InvalidArgument, "rmsprop_epsilon must be positive");
    if (batch_size == 0) fail(ErrorCode::InvalidArgument, "batch_size must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        fail(ErrorCode::InvalidArgument, "validation_fraction in [0,1)");
}

const DenseLayer& AutoencoderModel::layer(std::size_t i) const {
    return i < encoder.size() ? encoder[i] : decoder.at(i - encoder.size());
}

DenseLayer& AutoencoderModel::layer(std::size_t i) {
    return i < encoder.size() ? encoder[i] : decoder.at(i - encoder.size());
}

void AutoencoderModel::validate() const {
    if (encoder.empty() || decoder.empty()) fail(ErrorCode::Format, "autoencoder has no layers");
    for (std::size_t i = 0; i < num_layers(); ++i) {
        const auto& l = layer(i);
        if (static_cast<std::size_t>(l.bias.size()) != l.out_dim())
            fail(ErrorCode::Format, "layer " + std::to_string(i) + " bias size does not match weight rows");
        if (i > 0 && layer(i - 1).out_dim() != l.in_dim())
            fail(ErrorCode::Format, "layer " + std::to_string(i) + " input does not chain with previous output");
        if (!l.weight.allFinite() || !l.bias.allFinite())
            fail(ErrorCode::NonFinite, "layer " + std::to_string(i) + " has non-finite parameters");
    }
    if (decoder.back().out_dim() != input_dim()) fail(ErrorCode::Format, "decoder output does not match input_dim");
}

AutoencoderModel ae_init(const AutoencoderConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    auto make = [&](std::size_t in, std::size_t out, bool relu) {
        DenseLayer l;
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = dist(rng);
        l.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out));
        l.relu = relu;
        return l;
    };
    AutoencoderModel m;
    std::size_t in = cfg.input_dim;
    for (auto w : cfg.encoder_hidden) {
        m.encoder.push_back(make(in, w, true));
        in = w;
    }
    m.encoder.push_back(make(in, cfg.latent_dim, false));
    in = cfg.latent_dim;
    for (auto w : cfg.decoder_hidden) {
        m.decoder.push_back(make(in, w, true));
        in = w;
    }
    m.decoder.push_back(make(in, cfg.input_dim, false));
    return m;
}

namespace {

// Columns are samples.
Eigen::MatrixXd forward_layer(const DenseLayer& l, const Eigen::MatrixXd& in) {
    Eigen::MatrixXd out = l.weight * in;
    out.colwise() += l.bias;
    if (l.relu) out = out.cwiseMax(0.0);
    return out;
}

Eigen::MatrixXd forward_range(const AutoencoderModel& m, std::size_t begin, std::size_t end, Eigen::MatrixXd x) {
    for (std::size_t i = begin; i < end; ++i) x = forward_layer(m.layer(i), x);
    return x;
}

void check_input(const AutoencoderModel& m, Eigen::Index cols) {
    if (static_cast<std::size_t>(cols) != m.input_dim())
        fail(ErrorCode::DimensionMismatch, "autoencoder expects dimension " + std::to_string(m.input_dim()) +
                                               ", got " + std::to_string(cols));
}

}  // namespace

Eigen::VectorXd ae_encode(const AutoencoderModel& model, const Eigen::Ref<const Eigen::VectorXd>& x) {
    check_input(model, x.size());
    if (!x.allFinite()) fail(ErrorCode::NonFinite, "visual input not finite");
    Eigen::VectorXd h = x;
    for (const auto& l : model.encoder) {
        Eigen::VectorXd next = l.bias;
        next.noalias() += l.weight * h;
        if (l.relu) next = next.cwiseMax(0.0);
        h = std::move(next);
    }
    return h;
}

Eigen::MatrixXd ae_encode_batch(const AutoencoderModel& model, const Eigen::MatrixXd& rows) {
    check_input(model, rows.cols());
    return forward_range(model, 0, model.encoder.size(), rows.transpose()).transpose();
}

Eigen::MatrixXd ae_reconstruct(const AutoencoderModel& model, const Eigen::MatrixXd& rows) {
    check_input(model, rows.cols());
    return forward_range(model, 0, model.num_layers(), rows.transpose()).transpose();
}

double ae_loss(const AutoencoderModel& model, const Eigen::MatrixXd& data) {
    if (data.rows() == 0) fail(ErrorCode::EmptyDataset, "no rows to evaluate");
    return (ae_reconstruct(model, data) - data).squaredNorm() / static_cast<double>(data.size());
}

AutoencoderGradients ae_gradients(const AutoencoderModel& model, const Eigen::MatrixXd& batch, double loss_scale) {
    if (batch.rows() == 0) fail(ErrorCode::EmptyDataset, "empty batch");
    check_input(model, batch.cols());
    const std::size_t layers = model.num_layers();

    std::vector<Eigen::MatrixXd> acts;  // acts[i] is the input to layer i
    acts.reserve(layers + 1);
    acts.push_back(batch.transpose());
    for (std::size_t i = 0; i < layers; ++i) acts.push_back(forward_layer(model.layer(i), acts.back()));

    const Eigen::MatrixXd diff = acts.back() - acts.front();
    const double count = static_cast<double>(batch.size());
    AutoencoderGradients g;
    g.loss = loss_scale * diff.squaredNorm() / count;
    g.weight.resize(layers);
    g.bias.resize(layers);

    Eigen::MatrixXd delta = (2.0 * loss_scale / count) * diff;
    for (std::size_t i = layers; i-- > 0;) {
        const auto& l = model.layer(i);
        if (l.relu) delta = (acts[i + 1].array() > 0.0).select(delta, 0.0);
        g.weight[i].noalias() = delta * acts[i].transpose();
        g.bias[i] = delta.rowwise().sum();
        if (i > 0) delta = l.weight.transpose() * delta;
    }
    for (std::size_t i = 0; i < layers; ++i) {
        if (!g.weight[i].allFinite() || !g.bias[i].allFinite())
            fail(ErrorCode::NonFinite, "gradient overflow in layer " + std::to_string(i));
    }
    return g;
}

void rmsprop_update(Eigen::Ref<Eigen::ArrayXXd> param, const Eigen::ArrayXXd& grad, Eigen::ArrayXXd& mean_square,
                    double learning_rate, double decay, double epsilon) {
    mean_square = decay * mean_square + (1.0 - decay) * grad.square();
    param -= learning_rate * grad / (mean_square + epsilon).sqrt();
}

AutoencoderModel ae_train(const Eigen::MatrixXd& data, const AutoencoderConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(data.rows());
    if (n == 0) fail(ErrorCode::EmptyDataset, "autoencoder training data has no rows");
    if (static_cast<std::size_t>(data.cols()) != cfg.input_dim)
        fail(ErrorCode::DimensionMismatch, "training data has " + std::to_string(data.cols()) +
                                               " columns, config input_dim is " + std::to_string(cfg.input_dim));
    if (!data.allFinite()) fail(ErrorCode::NonFinite, "autoencoder training data not finite");

    AutoencoderModel model = ae_init(cfg);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(n)));
    if (n - n_val == 0) n_val = 0;
    std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    Eigen::MatrixXd val(static_cast<Eigen::Index>(n_val), data.cols());
    for (std::size_t i = 0; i < n_val; ++i)
        val.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(order[n - n_val + i]));

    const std::size_t batch_size = std::min(cfg.batch_size, train_idx.size());
    const std::size_t layers = model.num_layers();
    std::vector<Eigen::ArrayXXd> ms_w(layers), ms_b(layers);
    for (std::size_t i = 0; i < layers; ++i) {
        ms_w[i] = Eigen::ArrayXXd::Zero(model.layer(i).weight.rows(), model.layer(i).weight.cols());
        ms_b[i] = Eigen::ArrayXXd::Zero(model.layer(i).bias.size(), 1);
    }

    AutoencoderModel best = model;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    Eigen::MatrixXd batch(static_cast<Eigen::Index>(batch_size), data.cols());

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < train_idx.size(); start += batch_size) {
            const std::size_t len = std::min(batch_size, train_idx.size() - start);
            batch.resize(static_cast<Eigen::Index>(len), data.cols());
            for (std::size_t r = 0; r < len; ++r)
                batch.row(static_cast<Eigen::Index>(r)) = data.row(static_cast<Eigen::Index>(train_idx[start + r]));
            AutoencoderGradients g;
            try {
                g = ae_gradients(model, batch);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NonFinite) throw;
                fail(ErrorCode::NonFinite, "training diverged at epoch " + std::to_string(epoch) + " (" + e.detail() + ")");
            }
            if (!std::isfinite(g.loss))
                fail(ErrorCode::NonFinite, "training loss diverged at epoch " + std::to_string(epoch));
            loss_sum += g.loss * static_cast<double>(len);
            seen += len;
            for (std::size_t i = 0; i < layers; ++i) {
                auto& l = model.layer(i);
                rmsprop_update(l.weight.array(), g.weight[i].array(), ms_w[i], cfg.learning_rate, cfg.rmsprop_decay,
                               cfg.rmsprop_epsilon);
                rmsprop_update(l.bias.array(), g.bias[i].array(), ms_b[i], cfg.learning_rate, cfg.rmsprop_decay,
                               cfg.rmsprop_epsilon);
            }
        }
        const double train_loss = loss_sum / static_cast<double>(seen);
        const double val_loss = n_val > 0 ? ae_loss(model, val) : train_loss;
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            fail(ErrorCode::NonFinite, "training loss diverged at epoch " + std::to_string(epoch));
        model.training_loss_history.push_back(train_loss);
        model.validation_loss_history.push_back(val_loss);
        if (on_epoch) on_epoch(epoch, train_loss, val_loss);

        if (val_loss < best_loss) {
            best_loss = val_loss;
            since_best = 0;
            best.encoder = model.encoder;
            best.decoder = model.decoder;
        } else if (++since_best >= cfg.early_stop_patience) {
            break;
        }
    }
    best.training_loss_history = std::move(model.training_loss_history);
    best.validation_loss_history = std::move(model.validation_loss_history);
    return best;
}

AutoencoderConfig ae_random_search(const Eigen::MatrixXd& data, const AutoencoderConfig& base, std::size_t trials,
                                   std::uint64_t seed) {
    if (trials == 0) return base;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> log_lr(std::log(1e-4), std::log(1e-2));
    const std::size_t batch_choices[] = {32, 64, 128};
    std::uniform_int_distribution<std::size_t> pick(0, 2);

    AutoencoderConfig best = base;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trials; ++t) {
        AutoencoderConfig cfg = base;
        cfg.learning_rate = std::exp(log_lr(rng));
        cfg.batch_size = batch_choices[pick(rng)];
        const AutoencoderModel m = ae_train(data, cfg);
        const auto& hist = m.validation_loss_history;
        const double loss = hist.empty() ? std::numeric_limits<double>::infinity()
                                         : *std::min_element(hist.begin(), hist.end());
        if (loss < best_loss) {
            best_loss = loss;
            best = cfg;
        }
    }
    return best;
}

}  // namespace tscseg
