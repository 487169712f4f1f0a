#pragma once

#include "flsim/nn.hpp"
#include "flsim/partition.hpp"
#include "flsim/quantize.hpp"
#include "flsim/tensor.hpp"
#include "flsim/topology.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flsim {

enum class Algorithm { cfa, cfa_ge, fa, centralized, isolated };
enum class MomentumMode { none, classic, nesterov };

inline std::string_view to_string(Algorithm a)
{
    switch (a) {
    case Algorithm::cfa: return "cfa";
    case Algorithm::cfa_ge: return "cfa-ge";
    case Algorithm::fa: return "fa";
    case Algorithm::centralized: return "centralized";
    case Algorithm::isolated: return "isolated";
    }
    return "?";
}

inline Algorithm parse_algorithm(std::string_view s)
{
    if (s == "cfa") return Algorithm::cfa;
    if (s == "cfa-ge" || s == "cfa_ge" || s == "cfage") return Algorithm::cfa_ge;
    if (s == "fa") return Algorithm::fa;
    if (s == "centralized") return Algorithm::centralized;
    if (s == "isolated") return Algorithm::isolated;
    throw std::invalid_argument("unknown algorithm '" + std::string(s) + "' (cfa, cfa-ge, fa, centralized, isolated)");
}

inline std::string_view to_string(MomentumMode m)
{
    switch (m) {
    case MomentumMode::none: return "none";
    case MomentumMode::classic: return "classic";
    case MomentumMode::nesterov: return "nesterov";
    }
    return "?";
}

inline MomentumMode parse_momentum(std::string_view s)
{
    if (s == "none" || s == "off" || s == "0") return MomentumMode::none;
    if (s == "classic" || s == "on" || s == "1") return MomentumMode::classic;
    if (s == "nesterov") return MomentumMode::nesterov;
    throw std::invalid_argument("unknown momentum mode '" + std::string(s) + "' (none, classic, nesterov)");
}

struct HyperParams {
    double eps = 1.0;   // consensus step
    double mu = 0.025;  // local SGD step
    double mu_s = 0.025; // server step (FA, centralized)
    // Neighbor-gradient rates mu*beta, one per trainable layer; the last entry
    // covers any further layers.
    std::vector<double> grad_rates{0.15};
    // Rate of the local steps that follow the neighbor-gradient step; < 0 means mu.
    double beta_self = -1.0;
    double ro = 0.99; // MEWMA weight of the fresh gradient
    MomentumMode momentum = MomentumMode::none;
    double ro_momentum = 0.0;
    std::size_t B = 5;
    std::size_t warmup = 3; // leading rounds that use the synchronous four-stage exchange
    unsigned quantize_bits = 16;
    bool quantize_numerics = false;

    double local_rate() const { return beta_self < 0.0 ? mu : beta_self; }

    std::vector<double> layer_rates(std::size_t layers) const
    {
        std::vector<double> r(layers, grad_rates.empty() ? 0.0 : grad_rates.back());
        for (std::size_t q = 0; q < layers && q < grad_rates.size(); ++q) r[q] = grad_rates[q];
        return r;
    }

    void validate() const
    {
        if (!(eps > 0.0 && eps <= 1.0)) throw std::invalid_argument("hyper: eps must lie in (0,1]");
        if (!(mu > 0.0)) throw std::invalid_argument("hyper: mu must be positive");
        if (!(mu_s > 0.0)) throw std::invalid_argument("hyper: mu_s must be positive");
        for (double r : grad_rates)
            if (!(r >= 0.0)) throw std::invalid_argument("hyper: gradient rates must be non-negative");
        if (!(ro > 0.0 && ro <= 1.0)) throw std::invalid_argument("hyper: ro must lie in (0,1]");
        if (!(ro_momentum >= 0.0 && ro_momentum < 1.0))
            throw std::invalid_argument("hyper: momentum decay must lie in [0,1)");
        if (B == 0) throw std::invalid_argument("hyper: B must be at least 1");
        check_bits(quantize_bits);
    }

    template <class Tag>
    ParamSet<Tag> exchanged(ParamSet<Tag> g) const
    {
        return quantize_numerics ? quantize(std::move(g), quantize_bits) : g;
    }
};

/// Tuned defaults by network size and degree: small (K < 15), medium
/// (15 <= K <= 50) and large (K > 50) networks.
inline HyperParams table_defaults(std::size_t K, std::size_t /*degree*/ = 2)
{
    HyperParams h;
    h.mu = 0.025;
    h.mu_s = 0.025;
    if (K < 15) {
        h.eps = 1.0;
        h.grad_rates = {0.15};
        h.ro = 0.99;
    } else if (K <= 50) {
        h.eps = 0.5;
        h.grad_rates = {0.1};
        h.ro = 0.95;
    } else {
        h.eps = 0.5;
        h.grad_rates = {0.1};
        h.ro = 0.9;
    }
    return h;
}

struct NodeState {
    std::size_t id = 0;
    ModelParams model;     // W
    ModelParams aggregate; // psi of the last round
    std::map<std::size_t, GradientSet> store; // predicted gradient per neighbor
    GradientSet velocity;
    std::size_t round = 0;
};

inline NodeState initial_state(std::size_t id, const ModelParams& w0)
{
    NodeState s;
    s.id = id;
    s.model = w0;
    s.aggregate = w0;
    s.velocity = zeros_like<GradientTag>(w0);
    return s;
}

enum class PayloadKind { cfa, cfa_ge, nesterov };

struct ExchangeMsg {
    std::size_t sender = 0;
    std::size_t round = 0;
    PayloadKind kind = PayloadKind::cfa;
    ModelParams model; // W, or W + decay*nu under Nesterov
    std::map<std::size_t, GradientSet> gradients; // keyed by receiver
};

using Inbox = std::vector<const ExchangeMsg*>;

/// Read-only inputs of one node transition.
struct NodeContext {
    const Architecture& arch;
    const Shard& shard;
    const HyperParams& hyper;
    const MixingRow& alpha;
    std::uint64_t seed = 0;
    std::size_t round = 0;
};

struct RoundOutput {
    NodeState state;
    ExchangeMsg msg;
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

/// psi = W + eps * sum_i alpha_i (M_i - W) over the received models only.
inline ModelParams consensus_aggregate(const ModelParams& w, const std::map<std::size_t, const ModelParams*>& received,
                                       double eps, const MixingRow& alpha)
{
    ModelParams psi = w;
    for (const auto& [i, m] : received) {
        const auto a = alpha.find(i);
        if (a == alpha.end()) throw std::invalid_argument("consensus_aggregate: no mixing weight for node " + std::to_string(i));
        require_congruent(w, *m, "consensus_aggregate");
        const double c = eps * a->second;
        for (std::size_t q = 0; q < psi.layers.size(); ++q) {
            auto& p = psi.layers[q];
            const auto& mi = m->layers[q];
            const auto& wq = w.layers[q];
            for (std::size_t j = 0; j < p.weights.values.size(); ++j)
                p.weights.values[j] += c * (mi.weights.values[j] - wq.weights.values[j]);
            for (std::size_t j = 0; j < p.bias.size(); ++j) p.bias[j] += c * (mi.bias[j] - wq.bias[j]);
        }
    }
    return psi;
}

/// ro * fresh + (1 - ro) * prev
inline GradientSet mewma_update(const GradientSet& prev, const GradientSet& fresh, double ro)
{
    if (!(ro > 0.0 && ro <= 1.0)) throw std::invalid_argument("mewma_update: ro must lie in (0,1]");
    require_congruent(prev, fresh, "mewma_update");
    GradientSet out = prev;
    scale(out, 1.0 - ro);
    axpy(out, ro, fresh);
    return out;
}

/// Gradient of the shard's loss at `at` on one mini-batch, chosen by cycling
/// through the round's batches with `slot`.
inline GradientSet single_batch_gradient(const Architecture& arch, const ModelParams& at, const Shard& shard,
                                         std::size_t B, std::uint64_t seed, std::size_t round, std::size_t slot)
{
    const auto batches = minibatches(shard, std::min(B, shard.size()), seed, round);
    return backward(arch, at, gather(shard, batches[(round + slot) % batches.size()])).grad;
}

/// Full-shard gradient (mean over every local example).
inline GradientSet shard_gradient(const Architecture& arch, const ModelParams& at, const Shard& shard)
{
    return backward(arch, at, batch_of(shard.examples)).grad;
}

/// One pass of local SGD over all of the shard's mini-batches for this epoch.
/// With momentum the velocity carries across batches (and rounds).
inline ModelParams local_pass(const Architecture& arch, ModelParams w, GradientSet& velocity, const Shard& shard,
                              const HyperParams& h, double rate, std::uint64_t seed, std::uint64_t epoch)
{
    for (const auto& idx : minibatches(shard, std::min(h.B, shard.size()), seed, epoch)) {
        const Batch b = gather(shard, idx);
        switch (h.momentum) {
        case MomentumMode::none:
            w = sgd_step(std::move(w), backward(arch, w, b).grad, rate);
            break;
        case MomentumMode::classic: {
            auto g = backward(arch, w, b).grad;
            std::tie(w, velocity) = momentum_step(std::move(w), std::move(velocity), g, rate, h.ro_momentum);
            break;
        }
        case MomentumMode::nesterov: {
            ModelParams look = w;
            axpy(look, h.ro_momentum, velocity);
            auto g = backward(arch, look, b).grad;
            std::tie(w, velocity) = momentum_step(std::move(w), std::move(velocity), g, rate, h.ro_momentum);
            break;
        }
        }
    }
    return w;
}

namespace detail {

inline std::map<std::size_t, const ModelParams*> models_of(const Inbox& inbox)
{
    std::map<std::size_t, const ModelParams*> m;
    for (const ExchangeMsg* msg : inbox) m[msg->sender] = &msg->model;
    return m;
}

/// Applies the neighbor-gradient step to psi: plain descent, or the velocity
/// update psi + nu with nu = decay*nu - sum rate*g.
inline ModelParams apply_neighbor_gradients(ModelParams psi, GradientSet& velocity,
                                            const std::vector<const GradientSet*>& grads, const NodeContext& ctx)
{
    const auto rates = ctx.hyper.layer_rates(psi.layers.size());
    std::vector<double> neg(rates.size());
    std::transform(rates.begin(), rates.end(), neg.begin(), [](double r) { return -r; });
    if (ctx.hyper.momentum == MomentumMode::none) {
        for (const GradientSet* g : grads) axpy_per_layer(psi, neg, ctx.hyper.exchanged(*g));
        return psi;
    }
    scale(velocity, ctx.hyper.ro_momentum);
    for (const GradientSet* g : grads) axpy_per_layer(velocity, neg, ctx.hyper.exchanged(*g));
    axpy(psi, 1.0, velocity);
    return psi;
}

/// Published model: the updated W, or the look-ahead W + decay*nu under Nesterov.
inline ExchangeMsg publish(const NodeState& s, const NodeContext& ctx)
{
    ExchangeMsg msg;
    msg.sender = s.id;
    msg.round = ctx.round;
    msg.kind = PayloadKind::cfa_ge;
    msg.model = s.model;
    if (ctx.hyper.momentum == MomentumMode::nesterov) {
        msg.kind = PayloadKind::nesterov;
        axpy(msg.model, ctx.hyper.ro_momentum, s.velocity);
    }
    msg.gradients = s.store;
    return msg;
}

} // namespace detail

/// Refreshes the per-neighbor gradient predictions: for every received
/// model, a fresh local gradient at it is folded into the store. Entries
/// are kept only for `neighbors`; new ones start at zero.
inline void update_predictions(NodeState& s, const Inbox& inbox, const std::vector<std::size_t>& neighbors,
                               const NodeContext& ctx)
{
    std::map<std::size_t, GradientSet> kept;
    for (auto i : neighbors) {
        auto it = s.store.find(i);
        kept[i] = it != s.store.end() ? std::move(it->second) : zeros_like<GradientTag>(s.model);
    }
    s.store = std::move(kept);
    for (const ExchangeMsg* msg : inbox) {
        auto it = s.store.find(msg->sender);
        if (it == s.store.end()) continue;
        const auto fresh = single_batch_gradient(ctx.arch, msg->model, ctx.shard, ctx.hyper.B, ctx.seed, ctx.round, msg->sender);
        it->second = mewma_update(it->second, fresh, ctx.hyper.ro);
    }
}

// ---------------------------------------------------------------------------
// Round transitions
// ---------------------------------------------------------------------------

/// Local training only.
inline NodeState isolated_round(NodeState s, const NodeContext& ctx)
{
    s.model = local_pass(ctx.arch, std::move(s.model), s.velocity, ctx.shard, ctx.hyper, ctx.hyper.mu, ctx.seed, ctx.round);
    s.aggregate = s.model;
    s.round = ctx.round + 1;
    return s;
}

/// Consensus on received models, then one local SGD pass. Publishes W.
inline RoundOutput cfa_round(NodeState s, const Inbox& inbox, const NodeContext& ctx)
{
    ModelParams psi = consensus_aggregate(s.model, detail::models_of(inbox), ctx.hyper.eps, ctx.alpha);
    s.model = local_pass(ctx.arch, std::move(psi), s.velocity, ctx.shard, ctx.hyper, ctx.hyper.mu, ctx.seed, ctx.round);
    s.aggregate = s.model;
    s.round = ctx.round + 1;
    ExchangeMsg msg{s.id, ctx.round, PayloadKind::cfa, s.model, {}};
    return {std::move(s), std::move(msg)};
}

/// What a node can see of a neighbor under the synchronous exchange.
struct NeighborView {
    std::size_t id = 0;
    const ModelParams* model = nullptr; // W_{t,i}
    const Shard* shard = nullptr;
};

/// Synchronous CFA-GE: consensus on neighbor models, each neighbor returns a
/// gradient of its own data at this node's aggregate, the combined step is
/// applied, then the local pass runs from the result. `inbox` (previous
/// round's publications, may be empty) only feeds the prediction store so a
/// later switch to the two-stage exchange starts warm.
inline RoundOutput cfa_ge_round_4stage(NodeState s, const std::vector<NeighborView>& neighbors, const Inbox& inbox,
                                       const NodeContext& ctx)
{
    std::map<std::size_t, const ModelParams*> models;
    std::vector<std::size_t> ids;
    for (const auto& n : neighbors) {
        if (n.model == nullptr || n.shard == nullptr)
            throw std::invalid_argument("cfa_ge_round_4stage: neighbor " + std::to_string(n.id) + " is unavailable");
        models[n.id] = n.model;
        ids.push_back(n.id);
    }
    ModelParams psi = consensus_aggregate(s.model, models, ctx.hyper.eps, ctx.alpha);

    std::vector<GradientSet> fresh;
    fresh.reserve(neighbors.size());
    for (const auto& n : neighbors)
        fresh.push_back(single_batch_gradient(ctx.arch, psi, *n.shard, ctx.hyper.B, ctx.seed, ctx.round, s.id));
    std::vector<const GradientSet*> grads;
    for (const auto& g : fresh) grads.push_back(&g);

    ModelParams tilde = detail::apply_neighbor_gradients(psi, s.velocity, grads, ctx);
    update_predictions(s, inbox, ids, ctx);
    s.model = local_pass(ctx.arch, std::move(tilde), s.velocity, ctx.shard, ctx.hyper, ctx.hyper.local_rate(), ctx.seed,
                         ctx.round);
    s.aggregate = psi;
    s.round = ctx.round + 1;
    ExchangeMsg msg = detail::publish(s, ctx);
    return {std::move(s), std::move(msg)};
}

/// Two-stage CFA-GE: consensus on the received models, predicted gradients
/// from the neighbors applied one per message, local pass. Missing messages
/// drop their terms. Publishes [W', predictions]; a neighbor's prediction for
/// this node was evaluated at the model this node published two rounds ago.
inline RoundOutput cfa_ge_round_2stage(NodeState s, const Inbox& inbox, const std::vector<std::size_t>& neighbors,
                                       const NodeContext& ctx)
{
    ModelParams psi = consensus_aggregate(s.model, detail::models_of(inbox), ctx.hyper.eps, ctx.alpha);
    update_predictions(s, inbox, neighbors, ctx);

    std::vector<const GradientSet*> grads;
    for (const ExchangeMsg* msg : inbox) {
        const auto it = msg->gradients.find(s.id);
        if (it != msg->gradients.end()) grads.push_back(&it->second);
    }
    ModelParams tilde = detail::apply_neighbor_gradients(psi, s.velocity, grads, ctx);
    s.model = local_pass(ctx.arch, std::move(tilde), s.velocity, ctx.shard, ctx.hyper, ctx.hyper.local_rate(), ctx.seed,
                         ctx.round);
    s.aggregate = psi;
    s.round = ctx.round + 1;
    ExchangeMsg msg = detail::publish(s, ctx);
    return {std::move(s), std::move(msg)};
}

/// Server update from the full-shard gradients of the participants:
/// W - mu_s / n * sum_k (E_k / E) * g_k, with E the total over all shards.
inline ModelParams fa_round(const Architecture& arch, const ModelParams& w, const std::vector<std::size_t>& participants,
                            const std::vector<Shard>& shards, const HyperParams& h)
{
    if (participants.empty()) throw std::invalid_argument("fa_round: no participating nodes");
    double total = 0.0;
    for (const auto& s : shards) total += static_cast<double>(s.size());
    ModelParams out = w;
    const double n = static_cast<double>(participants.size());
    for (auto k : participants) {
        const Shard& s = shards.at(k);
        const auto g = h.exchanged(shard_gradient(arch, w, s));
        axpy(out, -h.mu_s / n * static_cast<double>(s.size()) / total, g);
    }
    return out;
}

/// Full-gradient step on the pooled objective sum_k (E_k / E) L_k.
inline ModelParams centralized_step(const Architecture& arch, const ModelParams& w, const std::vector<Shard>& shards,
                                    double mu_s)
{
    double total = 0.0;
    for (const auto& s : shards) total += static_cast<double>(s.size());
    ModelParams out = w;
    for (const auto& s : shards) axpy(out, -mu_s * static_cast<double>(s.size()) / total, shard_gradient(arch, w, s));
    return out;
}

/// Server-side starting point when entering an FA phase: E_k/E-weighted
/// average of the node models.
inline ModelParams weighted_average(const std::vector<NodeState>& nodes, const std::vector<Shard>& shards)
{
    double total = 0.0;
    for (const auto& s : shards) total += static_cast<double>(s.size());
    ModelParams avg = zeros_like<ModelTag>(nodes.front().model);
    for (std::size_t k = 0; k < nodes.size(); ++k)
        axpy(avg, static_cast<double>(shards[k].size()) / total, nodes[k].model);
    return avg;
}

} // namespace flsim
