#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "swarm_isac/admm.hpp"

namespace swarm_isac {

/// Sender/recipient id of the coordinating node. Agents use [0, N).
inline constexpr int kProxyId = -1;

struct AgentState {
  int id = 0;
  Vec3 q0 = Vec3::Zero();
  Vec3 q = Vec3::Zero();
  Vec3 z = Vec3::Zero();
  Vec3 mu = Vec3::Zero();
  long iter = 0;
  // local bookkeeping between rounds
  Vec3 q_next = Vec3::Zero();
  int inner = 0;
  bool halted = false;
};

enum class MessageKind { ZMuReport, GradientBroadcast, IterationBarrier, Halt };

inline const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::ZMuReport: return "ZMuReport";
    case MessageKind::GradientBroadcast: return "GradientBroadcast";
    case MessageKind::IterationBarrier: return "IterationBarrier";
    case MessageKind::Halt: return "Halt";
  }
  return "Unknown";
}

/// One bus message. `inner` numbers the descent rounds inside an iteration when
/// inner_steps > 1 and is 0 otherwise.
struct Message {
  MessageKind kind = MessageKind::ZMuReport;
  int sender = 0;
  int recipient = 0;
  long iter = 0;
  int inner = 0;
  Vec3 z = Vec3::Zero();
  Vec3 mu = Vec3::Zero();
  Vec3 q_next = Vec3::Zero();
  Vec3 gradient = Vec3::Zero();
};

inline AgentState make_agent(int id, const Vec3& q0, const Vec3& z0) {
  AgentState a;
  a.id = id;
  a.q0 = q0;
  a.q = q0;
  a.z = z0;
  return a;
}

struct AgentStep {
  AgentState state;
  std::optional<Message> outgoing;
};

inline Message make_report(const AgentState& a) {
  Message m;
  m.kind = MessageKind::ZMuReport;
  m.sender = a.id;
  m.recipient = kProxyId;
  m.iter = a.iter;
  m.inner = a.inner;
  m.z = a.z;
  m.mu = a.mu;
  m.q_next = a.q_next;
  return m;
}

/// Agent reaction to one incoming message (or none, for the bootstrap round).
///
/// Without input the agent runs the local projection for its current iteration and
/// reports (z, mu, q_next) without touching z. A gradient for (iter, inner) triggers
/// z <- z - eta g; after the last inner step it also runs the dual update, advances
/// iter, projects for the next iteration and reports again. Halt freezes the agent.
inline AgentStep agent_step1_3(const AgentState& agent, const Message* incoming,
                               const AdmmConfig& cfg, double r_max) {
  AgentStep out{agent, std::nullopt};
  AgentState& a = out.state;
  if (a.halted) {
    if (incoming) throw ProtocolError("agent " + std::to_string(a.id) + " received a message after Halt");
    return out;
  }
  if (!incoming) {
    a.inner = 0;
    a.q_next = local_update(a.z, a.mu, a.q0, cfg.rho, r_max);
    out.outgoing = make_report(a);
    return out;
  }
  if (incoming->kind == MessageKind::Halt) {
    a.halted = true;
    return out;
  }
  if (incoming->kind != MessageKind::GradientBroadcast) {
    throw ProtocolError("agent " + std::to_string(a.id) + " got unexpected " + to_string(incoming->kind));
  }
  if (incoming->recipient != a.id) {
    throw ProtocolError("agent " + std::to_string(a.id) + " got a gradient addressed to " +
                        std::to_string(incoming->recipient));
  }
  if (incoming->iter != a.iter || incoming->inner != a.inner) {
    throw ProtocolError("agent " + std::to_string(a.id) + " at iteration " + std::to_string(a.iter) + "." +
                        std::to_string(a.inner) + " got gradient tagged " + std::to_string(incoming->iter) +
                        "." + std::to_string(incoming->inner));
  }
  a.z -= cfg.eta * incoming->gradient;
  if (a.inner + 1 < cfg.inner_steps) {
    ++a.inner;
    out.outgoing = make_report(a);
    return out;
  }
  a.mu = dual_update(a.mu, a.q_next, a.z, cfg.rho);
  a.q = a.q_next;
  ++a.iter;
  a.inner = 0;
  a.q_next = local_update(a.z, a.mu, a.q0, cfg.rho, r_max);
  out.outgoing = make_report(a);
  return out;
}

/// Orders a round of reports by sender and checks that it is complete and
/// carries a single (iter, inner) tag.
inline std::vector<const Message*> collate_reports(const std::vector<Message>& reports, std::size_t num_uavs) {
  if (reports.size() != num_uavs) {
    throw ProtocolError("round has " + std::to_string(reports.size()) + " reports, expected " +
                        std::to_string(num_uavs));
  }
  std::vector<const Message*> by_id(num_uavs, nullptr);
  for (const Message& m : reports) {
    if (m.kind != MessageKind::ZMuReport) throw ProtocolError(std::string("round contains a ") + to_string(m.kind));
    if (m.sender < 0 || static_cast<std::size_t>(m.sender) >= num_uavs) {
      throw ProtocolError("report from unknown sender " + std::to_string(m.sender));
    }
    if (by_id[m.sender]) throw ProtocolError("duplicate report from agent " + std::to_string(m.sender));
    if (m.iter != reports.front().iter || m.inner != reports.front().inner) {
      throw ProtocolError("round mixes iteration tags " + std::to_string(reports.front().iter) + " and " +
                          std::to_string(m.iter));
    }
    by_id[m.sender] = &m;
  }
  return by_id;
}

struct RoundState {
  std::vector<Vec3> z, mu, q_next;
};

inline RoundState assemble(const std::vector<const Message*>& by_id) {
  RoundState s;
  for (const Message* m : by_id) {
    s.z.push_back(m->z);
    s.mu.push_back(m->mu);
    s.q_next.push_back(m->q_next);
  }
  return s;
}

inline std::vector<Message> make_broadcasts(const GradientField& g, long iter, int inner) {
  std::vector<Message> out(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    out[n].kind = MessageKind::GradientBroadcast;
    out[n].sender = kProxyId;
    out[n].recipient = static_cast<int>(n);
    out[n].iter = iter;
    out[n].inner = inner;
    out[n].gradient = g[n];
  }
  return out;
}

/// Stateless proxy round: evaluates the coupled gradient at the reported Z and
/// hands each agent its own component.
inline std::vector<Message> proxy_round(const std::vector<Message>& reports, const Scenario& scenario,
                                        const AdmmConfig& cfg) {
  const auto by_id = collate_reports(reports, scenario.num_uavs());
  const RoundState s = assemble(by_id);
  const GradientField g = grad_consensus_objective(s.z, s.q_next, s.mu, cfg.rho, scenario);
  return make_broadcasts(g, by_id.front()->iter, by_id.front()->inner);
}

/// FIFO in-process bus with counters.
class Bus {
 public:
  void post(Message m) {
    if (m.kind == MessageKind::Halt) {
      ++halt_messages_;
    } else {
      ++data_messages_;
    }
    queue_.push_back(std::move(m));
  }
  bool empty() const { return queue_.empty(); }
  const Message& front() const { return queue_.front(); }
  Message pop() {
    Message m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }
  /// ZMuReport and GradientBroadcast traffic.
  long data_messages() const { return data_messages_; }
  long halt_messages() const { return halt_messages_; }

 private:
  std::deque<Message> queue_;
  long data_messages_ = 0;
  long halt_messages_ = 0;
};

struct SimOptions {
  /// 0 delivers each round in sender order; otherwise the agents handle their
  /// gradients in an order shuffled by this seed.
  std::uint64_t schedule_seed = 0;
};

struct SimResult {
  RunResult run;
  long data_messages = 0;
  long halt_messages = 0;
};

/// Proxy node: barrier over N reports, gradient evaluation, trace recording.
class Proxy {
 public:
  Proxy(const Scenario& scenario, const AdmmConfig& cfg) : scenario_(scenario), cfg_(cfg) {}

  /// Buffers one report. Returns true once the round is complete.
  bool receive(const Message& m) {
    if (m.kind != MessageKind::ZMuReport) throw ProtocolError(std::string("proxy got ") + to_string(m.kind));
    if (!pending_.empty() && (m.iter != pending_.front().iter || m.inner != pending_.front().inner)) {
      throw ProtocolError("stale report from agent " + std::to_string(m.sender) + " tagged " +
                          std::to_string(m.iter) + " during round " + std::to_string(pending_.front().iter));
    }
    pending_.push_back(m);
    return pending_.size() == scenario_.num_uavs();
  }

  /// Processes the complete round: records the finished iteration (if any), then
  /// either halts or returns the next gradient broadcasts.
  std::vector<Message> process_round() {
    const auto by_id = collate_reports(pending_, scenario_.num_uavs());
    const long iter = by_id.front()->iter;
    const int inner = by_id.front()->inner;
    RoundState s = assemble(by_id);
    pending_.clear();

    if (iter != expected_iter_ || inner != expected_inner_) {
      throw ProtocolError("proxy expected round " + std::to_string(expected_iter_) + "." +
                          std::to_string(expected_inner_) + ", got " + std::to_string(iter) + "." +
                          std::to_string(inner));
    }
    if (!current_) {
      current_ = evaluate(s.z, scenario_);
      result_.initial = current_->report;
    } else {
      try {
        current_ = guarded_evaluate(s.z, scenario_);
      } catch (Error& e) {
        e.set_iteration(inner == 0 ? iter - 1 : iter);
        throw;
      }
    }

    if (inner == 0 && iter > 0) {
      // Round iter opens after iteration iter-1 closed: q^{iter} is the q_next of the
      // previous round, mu^{iter-1} the previous round's mu.
      const IterationRecord rec = make_record(iter, current_->report, prev_q_next_, s.z, prev_mu_, s.mu, cfg_.rho);
      const bool done = residuals_met(rec, cfg_);
      const bool last = done || iter == cfg_.max_iters;
      if (keep_record(rec.iter, cfg_.max_iters, last)) result_.trace.push_back(rec);
      result_.iters_run = iter;
      if (done) result_.converged = true;
      if (last) {
        halted_ = true;
        std::vector<Message> halts(scenario_.num_uavs());
        for (std::size_t n = 0; n < halts.size(); ++n) {
          halts[n].kind = MessageKind::Halt;
          halts[n].sender = kProxyId;
          halts[n].recipient = static_cast<int>(n);
          halts[n].iter = iter;
        }
        return halts;
      }
    }
    if (inner == 0) {
      prev_q_next_ = s.q_next;
      prev_mu_ = s.mu;
    }
    const GradientField g = consensus_gradient(*current_, s.z, s.q_next, s.mu, cfg_.rho, scenario_.omega);
    if (inner + 1 < cfg_.inner_steps) {
      expected_inner_ = inner + 1;
    } else {
      expected_inner_ = 0;
      expected_iter_ = iter + 1;
    }
    return make_broadcasts(g, iter, inner);
  }

  bool halted() const { return halted_; }
  RunResult& result() { return result_; }

 private:
  const Scenario& scenario_;
  AdmmConfig cfg_;
  std::vector<Message> pending_;
  std::optional<Evaluation> current_;
  std::vector<Vec3> prev_q_next_, prev_mu_;
  long expected_iter_ = 0;
  int expected_inner_ = 0;
  bool halted_ = false;
  RunResult result_;
};

/// Runs the ADMM loop as N agents plus a proxy exchanging messages on a Bus.
/// Single-threaded and deterministic; the proxy barrier makes the outcome
/// independent of the order in which agents handle a round.
inline SimResult simulate(const Scenario& scenario, const AdmmConfig& cfg, std::span<const Vec3> init_z,
                          const SimOptions& opts = {}) {
  validate(scenario);
  validate(cfg);
  if (init_z.size() != scenario.num_uavs()) throw std::invalid_argument("init_z must have one entry per UAV");
  const std::size_t n_uav = scenario.num_uavs();

  std::vector<AgentState> agents;
  for (std::size_t n = 0; n < n_uav; ++n) {
    agents.push_back(make_agent(static_cast<int>(n), scenario.initial_positions[n], init_z[n]));
  }
  Bus bus;
  Proxy proxy(scenario, cfg);
  std::mt19937_64 schedule(opts.schedule_seed);

  for (AgentState& a : agents) {
    AgentStep st = agent_step1_3(a, nullptr, cfg, scenario.r_max);
    a = std::move(st.state);
    bus.post(std::move(*st.outgoing));
  }

  std::vector<Message> to_agents;
  while (!bus.empty()) {
    Message m = bus.pop();
    if (m.recipient == kProxyId) {
      if (!proxy.receive(m)) continue;
      for (Message& out : proxy.process_round()) bus.post(std::move(out));
      continue;
    }
    to_agents.push_back(std::move(m));
    if (to_agents.size() < n_uav && !bus.empty() && bus.front().recipient != kProxyId) continue;
    if (opts.schedule_seed != 0) std::shuffle(to_agents.begin(), to_agents.end(), schedule);
    for (const Message& in : to_agents) {
      if (in.recipient < 0 || static_cast<std::size_t>(in.recipient) >= n_uav) {
        throw ProtocolError("message for unknown agent " + std::to_string(in.recipient));
      }
      AgentState& a = agents[in.recipient];
      AgentStep st = agent_step1_3(a, &in, cfg, scenario.r_max);
      a = std::move(st.state);
      if (st.outgoing) bus.post(std::move(*st.outgoing));
    }
    to_agents.clear();
  }
  if (!proxy.halted()) throw ProtocolError("bus drained before the proxy halted");

  SimResult out;
  out.run = std::move(proxy.result());
  SwarmState& fin = out.run.final_state;
  for (const AgentState& a : agents) {
    fin.q.push_back(a.q);
    fin.z.push_back(a.z);
    fin.mu.push_back(a.mu);
  }
  fin.iter = agents.front().iter;
  out.data_messages = bus.data_messages();
  out.halt_messages = bus.halt_messages();
  return out;
}

inline SimResult simulate(const Scenario& scenario, const AdmmConfig& cfg, const SimOptions& opts = {}) {
  return simulate(scenario, cfg, scenario.initial_positions, opts);
}

}  // namespace swarm_isac
