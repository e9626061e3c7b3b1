#pragma once

#include <condition_variable>
#include <exception>
#include <mutex>
#include <set>

#include "voxin/layers.hpp"

namespace vx {

// ---- task graph ------------------------------------------------------------
//
// The task-parallel FFT convolution runs a dependency graph of five task
// types.  Four synchronization points bound three stages:
//
//   sync0 -> [input transforms] -> sync1 -> [kernel transforms and
//   multiply-accumulates] -> sync2 -> [output inverses] -> sync3
//
// Multiply-accumulates for one (output map, batch entry) pair form a chain
// over the input maps, so every output spectrum is accumulated in the same
// order no matter how many workers run.  Task priority is the longest path to
// the final sync; ready tasks of equal priority run in id order.

enum class TaskType : unsigned char {
  sync,
  input_transform,
  kernel_transform,
  multiply_accumulate,
  output_inverse,
};

struct TaskNode {
  TaskType type;
  i64 i = -1;  // output map
  i64 j = -1;  // input map
  i64 s = -1;  // batch entry
  int stage = 0;
  i64 priority = 0;
  std::vector<i64> deps;  // ids this task waits on
};

struct TaskGraph {
  i64 f = 0, f_out = 0, S = 0;
  std::vector<TaskNode> nodes;
  i64 sync_id[4] = {0, 0, 0, 0};

  i64 input_id(i64 j, i64 s) const { return 1 + j * S + s; }
  i64 kernel_id(i64 i, i64 j) const { return 2 + f * S + i * f + j; }
  i64 mad_id(i64 i, i64 j, i64 s) const { return 2 + f * S + f_out * f + (i * f + j) * S + s; }
  i64 output_id(i64 i, i64 s) const {
    return 3 + f * S + f_out * f + f_out * f * S + i * S + s;
  }

  static TaskGraph build(i64 f, i64 f_out, i64 S) {
    require(f > 0 && f_out > 0 && S > 0, "TaskGraph: positive dimensions required");
    TaskGraph g;
    g.f = f;
    g.f_out = f_out;
    g.S = S;
    const i64 total = 4 + f * S + f_out * f + f_out * f * S + f_out * S;
    g.nodes.resize(static_cast<std::size_t>(total));

    auto put = [&](i64 id, TaskNode n) { g.nodes[static_cast<std::size_t>(id)] = std::move(n); };

    g.sync_id[0] = 0;
    put(0, {TaskType::sync, -1, -1, -1, 0, f + 6, {}});

    for (i64 j = 0; j < f; ++j)
      for (i64 s = 0; s < S; ++s)
        put(g.input_id(j, s), {TaskType::input_transform, -1, j, s, 1, f + 5, {g.sync_id[0]}});

    g.sync_id[1] = 1 + f * S;
    {
      TaskNode n{TaskType::sync, -1, -1, -1, 1, f + 4, {}};
      for (i64 j = 0; j < f; ++j)
        for (i64 s = 0; s < S; ++s) n.deps.push_back(g.input_id(j, s));
      put(g.sync_id[1], std::move(n));
    }

    for (i64 i = 0; i < f_out; ++i)
      for (i64 j = 0; j < f; ++j)
        put(g.kernel_id(i, j),
            {TaskType::kernel_transform, i, j, -1, 2, 4 + (f - 1 - j), {g.sync_id[1]}});

    for (i64 i = 0; i < f_out; ++i)
      for (i64 j = 0; j < f; ++j)
        for (i64 s = 0; s < S; ++s) {
          TaskNode n{TaskType::multiply_accumulate, i, j, s, 2, 3 + (f - 1 - j),
                     {g.kernel_id(i, j)}};
          if (j > 0) n.deps.push_back(g.mad_id(i, j - 1, s));
          put(g.mad_id(i, j, s), std::move(n));
        }

    g.sync_id[2] = 2 + f * S + f_out * f + f_out * f * S;
    {
      // the chain tails imply every earlier multiply-accumulate
      TaskNode n{TaskType::sync, -1, -1, -1, 2, 2, {}};
      for (i64 i = 0; i < f_out; ++i)
        for (i64 s = 0; s < S; ++s) n.deps.push_back(g.mad_id(i, f - 1, s));
      put(g.sync_id[2], std::move(n));
    }

    for (i64 i = 0; i < f_out; ++i)
      for (i64 s = 0; s < S; ++s)
        put(g.output_id(i, s), {TaskType::output_inverse, i, -1, s, 3, 1, {g.sync_id[2]}});

    g.sync_id[3] = total - 1;
    {
      TaskNode n{TaskType::sync, -1, -1, -1, 3, 0, {}};
      for (i64 i = 0; i < f_out; ++i)
        for (i64 s = 0; s < S; ++s) n.deps.push_back(g.output_id(i, s));
      put(g.sync_id[3], std::move(n));
    }
    return g;
  }

  i64 count(TaskType t) const {
    i64 c = 0;
    for (const auto& n : nodes) c += n.type == t ? 1 : 0;
    return c;
  }

  // Structural invariants: task counts, four syncs spanning three stages, and
  // priority equal to the longest path to the final sync.
  void validate() const {
    require(count(TaskType::sync) == 4, "TaskGraph: must have exactly 4 syncs");
    require(count(TaskType::input_transform) == f * S, "TaskGraph: input task count");
    require(count(TaskType::kernel_transform) == f_out * f, "TaskGraph: kernel task count");
    require(count(TaskType::multiply_accumulate) == f_out * f * S, "TaskGraph: mad task count");
    require(count(TaskType::output_inverse) == f_out * S, "TaskGraph: output task count");
    for (const auto& n : nodes)
      require(n.type == TaskType::sync || (n.stage >= 1 && n.stage <= 3),
              "TaskGraph: compute tasks must sit in stages 1..3");

    // longest path to the sink over the reversed edges
    std::vector<std::vector<i64>> dependents(nodes.size());
    for (std::size_t id = 0; id < nodes.size(); ++id)
      for (i64 d : nodes[id].deps) dependents[static_cast<std::size_t>(d)].push_back(static_cast<i64>(id));
    std::vector<i64> dist(nodes.size(), -1);
    // ids are topologically ordered by construction, so one reverse sweep works
    for (i64 id = static_cast<i64>(nodes.size()) - 1; id >= 0; --id) {
      i64 d = 0;
      for (i64 dep : dependents[static_cast<std::size_t>(id)]) {
        require(dep > id, "TaskGraph: ids must be topologically ordered");
        d = std::max(d, 1 + dist[static_cast<std::size_t>(dep)]);
      }
      dist[static_cast<std::size_t>(id)] = d;
      require(nodes[static_cast<std::size_t>(id)].priority == d,
              "TaskGraph: priority must equal distance to the final sync");
    }
  }
};

// ---- scheduler -------------------------------------------------------------

namespace detail {

// Runs the graph on `workers` threads.  The first min(workers, f_out) workers
// are primaries, each owning one kernel-spectrum buffer; a kernel transform
// runs only on a primary whose buffer has been drained (all its
// multiply-accumulates done), and a multiply-accumulate runs only on workers
// of the owning primary's affinity group (worker ids congruent mod the
// primary count).  Sync bookkeeping runs inline on whichever worker completes
// the last dependency.
template <class T>
class TaskConvRun {
  using Cx = std::complex<T>;

 public:
  TaskConvRun(const TaskGraph& g, Tensor5<T>& input, const ConvLayerParams<T>& params,
              const LayerContext<T>& ctx, Audit& audit, AuditCharge&& input_charge)
      : g_(g),
        input_(input),
        params_(params),
        ctx_(ctx),
        audit_(audit),
        input_charge_(std::move(input_charge)),
        n_(input.shape().n),
        k_(params.kernel_extents()),
        no_(n_ - k_ + vec3{1, 1, 1}),
        padded_(optimal_fft_sizes(n_, ctx.profile)),
        di_(nested_dims<T>(n_, padded_)),
        dk_(nested_dims<T>(k_, padded_)),
        spec_(di_.spectrum()),
        workers_(std::max<i64>(1, ctx.workers)),
        primaries_(std::min(workers_, g.f_out)),
        remaining_(g.nodes.size()),
        kernel_slot_(static_cast<std::size_t>(g.f_out * g.f), -1),
        kernel_done_(static_cast<std::size_t>(g.f_out * g.f), 0),
        chain_pos_(static_cast<std::size_t>(g.f_out * g.S), 0),
        buffer_free_(static_cast<std::size_t>(primaries_), 1),
        buffer_pending_(static_cast<std::size_t>(primaries_), 0),
        ready_mads_(static_cast<std::size_t>(primaries_)) {
    for (std::size_t id = 0; id < g.nodes.size(); ++id)
      remaining_[id] = static_cast<i64>(g_.nodes[id].deps.size());
    run_sync(0);  // entry sync: nothing waits on it
    for (i64 j = 0; j < g_.f; ++j)
      for (i64 s = 0; s < g_.S; ++s) ready_general_.insert(order_key(g_.input_id(j, s)));
  }

  Tensor5<T> run() {
    ThreadPool::global().run(static_cast<std::size_t>(workers_),
                             [this](std::size_t w, std::size_t) { worker(static_cast<i64>(w)); });
    if (error_) std::rethrow_exception(error_);
    return std::move(out_);
  }

 private:
  std::pair<i64, i64> order_key(i64 id) const {
    return {-g_.nodes[static_cast<std::size_t>(id)].priority, id};
  }

  void worker(i64 w) {
    std::unique_lock<std::mutex> lk(mu_);
    while (true) {
      if (abort_) return;
      if (done_ == static_cast<i64>(g_.nodes.size())) return;

      i64 pick = -1;
      std::pair<i64, i64> best{0, 0};
      bool have = false;
      auto consider = [&](const std::set<std::pair<i64, i64>>& set) {
        if (!set.empty() && (!have || *set.begin() < best)) {
          best = *set.begin();
          have = true;
        }
      };
      consider(ready_general_);
      if (w < primaries_ && buffer_free_[static_cast<std::size_t>(w)]) consider(ready_kernels_);
      if (primaries_ > 0) consider(ready_mads_[static_cast<std::size_t>(w % primaries_)]);
      if (have) {
        pick = best.second;
        const TaskType t = g_.nodes[static_cast<std::size_t>(pick)].type;
        if (t == TaskType::kernel_transform) {
          ready_kernels_.erase(best);
          buffer_free_[static_cast<std::size_t>(w)] = 0;  // claimed before unlock
        } else if (t == TaskType::multiply_accumulate) {
          ready_mads_[static_cast<std::size_t>(w % primaries_)].erase(best);
        } else {
          ready_general_.erase(best);
        }
      }

      if (pick < 0) {
        cv_.wait(lk);
        continue;
      }

      lk.unlock();
      try {
        execute(pick, w);
        lk.lock();
        complete(pick, w);  // sync bookkeeping may throw on a memory cap
      } catch (...) {
        if (!lk.owns_lock()) lk.lock();
        if (!error_) error_ = std::current_exception();
        abort_ = true;
        cv_.notify_all();
        return;
      }
      cv_.notify_all();
    }
  }

  void execute(i64 id, i64 w) {
    const TaskNode& node = g_.nodes[static_cast<std::size_t>(id)];
    FftContext<T> fft{ctx_.engine, 1, nullptr};  // tasks are the parallelism
    switch (node.type) {
      case TaskType::input_transform: {
        AuditCharge pad(audit_, di_.p.x * n_.y * n_.z);
        pruned_forward_into(image_view(input_, node.s, node.j), di_,
                            itf_.data() + (node.s * g_.f + node.j) * spec_, fft);
        break;
      }
      case TaskType::kernel_transform: {
        AuditCharge pad(audit_, dk_.p.x * k_.y * k_.z);
        pruned_forward_into(image_view(params_.kernels, node.i, node.j), dk_,
                            bufs_.data() + w * spec_, fft);
        break;
      }
      case TaskType::multiply_accumulate: {
        const i64 slot = kernel_slot_[static_cast<std::size_t>(node.i * g_.f + node.j)];
        const Cx* ker = bufs_.data() + slot * spec_;
        const Cx* t = itf_.data() + (node.s * g_.f + node.j) * spec_;
        Cx* a = acc_.data() + (node.s * g_.f_out + node.i) * spec_;
        for (i64 v = 0; v < spec_; ++v) a[v] += t[v] * ker[v];
        break;
      }
      case TaskType::output_inverse: {
        T* o = out_.image(node.s, node.i);
        pruned_inverse_region(acc_.data() + (node.s * g_.f_out + node.i) * spec_, di_,
                              k_ - vec3{1, 1, 1}, no_, o, no_.y * no_.z, no_.z, fft);
        const T bias = params_.bias[static_cast<std::size_t>(node.i)];
        for (i64 v = 0; v < no_.elements(); ++v) o[v] = activate(o[v] + bias, params_.act);
        break;
      }
      default: break;  // syncs never reach execute
    }
  }

  // called under the lock
  void complete(i64 id, i64 w) {
    const TaskNode& node = g_.nodes[static_cast<std::size_t>(id)];
    ++done_;
    switch (node.type) {
      case TaskType::input_transform:
        if (--remaining_[static_cast<std::size_t>(g_.sync_id[1])] == 0) run_sync(1);
        break;
      case TaskType::kernel_transform: {
        const std::size_t kj = static_cast<std::size_t>(node.i * g_.f + node.j);
        kernel_slot_[kj] = w;
        kernel_done_[kj] = 1;
        buffer_pending_[static_cast<std::size_t>(w)] = g_.S;
        for (i64 s = 0; s < g_.S; ++s)
          if (chain_pos_[static_cast<std::size_t>(node.i * g_.S + s)] == node.j)
            ready_mads_[static_cast<std::size_t>(w)].insert(order_key(g_.mad_id(node.i, node.j, s)));
        break;
      }
      case TaskType::multiply_accumulate: {
        chain_pos_[static_cast<std::size_t>(node.i * g_.S + node.s)] = node.j + 1;
        const i64 slot = kernel_slot_[static_cast<std::size_t>(node.i * g_.f + node.j)];
        if (--buffer_pending_[static_cast<std::size_t>(slot)] == 0)
          buffer_free_[static_cast<std::size_t>(slot)] = 1;
        if (node.j + 1 < g_.f) {
          const std::size_t next = static_cast<std::size_t>(node.i * g_.f + node.j + 1);
          if (kernel_done_[next])
            ready_mads_[static_cast<std::size_t>(kernel_slot_[next])].insert(
                order_key(g_.mad_id(node.i, node.j + 1, node.s)));
        } else {
          if (--remaining_[static_cast<std::size_t>(g_.sync_id[2])] == 0) run_sync(2);
        }
        break;
      }
      case TaskType::output_inverse:
        if (--remaining_[static_cast<std::size_t>(g_.sync_id[3])] == 0) run_sync(3);
        break;
      default: break;
    }
  }

  // stage-boundary bookkeeping; may throw when a cap is exceeded
  void run_sync(int which) {
    switch (which) {
      case 0:
        itf_charge_ = AuditCharge(audit_, 2 * g_.S * g_.f * spec_);
        itf_.assign(static_cast<std::size_t>(g_.S * g_.f * spec_), Cx(0));
        break;
      case 1:
        input_.release();
        input_charge_.reset();
        acc_charge_ = AuditCharge(audit_, 2 * g_.S * g_.f_out * spec_);
        acc_.assign(static_cast<std::size_t>(g_.S * g_.f_out * spec_), Cx(0));
        buf_charge_ = AuditCharge(audit_, 2 * primaries_ * spec_);
        bufs_.assign(static_cast<std::size_t>(primaries_ * spec_), Cx(0));
        for (i64 i = 0; i < g_.f_out; ++i)
          for (i64 j = 0; j < g_.f; ++j) ready_kernels_.insert(order_key(g_.kernel_id(i, j)));
        break;
      case 2:
        itf_charge_.reset();
        itf_ = std::vector<Cx>();
        buf_charge_.reset();
        bufs_ = std::vector<Cx>();
        out_charge_ = AuditCharge(audit_, g_.S * g_.f_out * no_.elements());
        out_ = Tensor5<T>(Shape5{g_.S, g_.f_out, no_});
        for (i64 i = 0; i < g_.f_out; ++i)
          for (i64 s = 0; s < g_.S; ++s) ready_general_.insert(order_key(g_.output_id(i, s)));
        break;
      default:
        acc_charge_.reset();
        acc_ = std::vector<Cx>();
        break;
    }
    ++done_;
  }

  const TaskGraph& g_;
  Tensor5<T>& input_;
  const ConvLayerParams<T>& params_;
  const LayerContext<T>& ctx_;
  Audit& audit_;
  AuditCharge input_charge_;

  vec3 n_, k_, no_, padded_;
  NestedDims<T> di_, dk_;
  i64 spec_;
  i64 workers_, primaries_;

  std::mutex mu_;
  std::condition_variable cv_;
  bool abort_ = false;
  std::exception_ptr error_;
  i64 done_ = 0;

  std::vector<i64> remaining_;
  std::vector<i64> kernel_slot_;
  std::vector<char> kernel_done_;
  std::vector<i64> chain_pos_;
  std::vector<char> buffer_free_;
  std::vector<i64> buffer_pending_;
  std::set<std::pair<i64, i64>> ready_general_;
  std::set<std::pair<i64, i64>> ready_kernels_;
  std::vector<std::set<std::pair<i64, i64>>> ready_mads_;

  std::vector<Cx> itf_, acc_, bufs_;
  Tensor5<T> out_;
  AuditCharge itf_charge_, acc_charge_, buf_charge_, out_charge_;
};

}  // namespace detail

// ---- FFT convolution, task-parallel ----------------------------------------

template <class T>
LayerResult<T> conv_fft_task_parallel(Tensor5<T> input, const ConvLayerParams<T>& params,
                                      const LayerContext<T>& ctx) {
  require(ctx.workers >= 1, "conv_fft_task_parallel: at least one worker required");
  params.validate(input.shape());
  const Shape5 in_sh = input.shape();
  const i64 S = in_sh.s, f = in_sh.f, fo = params.features_out();
  const vec3 n = in_sh.n, k = params.kernel_extents();
  const vec3 no = n - k + vec3{1, 1, 1};

  detail::Audit audit(ctx.cap_tracker);
  detail::AuditCharge input_charge(audit, input.size());

  TaskGraph graph = TaskGraph::build(f, fo, S);
  Tensor5<T> out;
  {
    detail::TaskConvRun<T> run(graph, input, params, ctx, audit, std::move(input_charge));
    out = run.run();
  }

  ResourceEnv env;
  env.workers = static_cast<double>(std::min<i64>(std::max<i64>(1, ctx.workers), fo));
  const double model =
      layer_memory(PrimitiveKind::fft_task_parallel, static_cast<double>(S),
                   static_cast<double>(f), static_cast<double>(fo),
                   static_cast<double>(n.elements()), static_cast<double>(no.elements()),
                   transformed_real_elements(n, ctx.profile), env);
  return {std::move(out), MemoryAudit{static_cast<double>(audit.peak()), model}};
}

}  // namespace vx
