#include "cgr/serialize.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cgr {

using json = nlohmann::ordered_json;

namespace {

json mat_to_json(const Mat& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data(m.data(), m.data() + m.size());
  j["data"] = data;  // column-major
  return j;
}

Mat mat_from_json(const json& j) {
  Mat m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != m.size())
    throw ConfigError("checkpoint matrix size mismatch");
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

json vec_to_json(const Vec& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vec vec_from_json(const json& j) {
  auto data = j.get<std::vector<double>>();
  return Eigen::Map<Vec>(data.data(), data.size());
}

json bool_table_to_json(const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& a) {
  json j;
  j["rows"] = a.rows();
  j["cols"] = a.cols();
  std::string bits(a.size(), '0');
  for (Eigen::Index i = 0; i < a.size(); ++i) bits[i] = a(i) ? '1' : '0';
  j["bits"] = bits;
  return j;
}

Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> bool_table_from_json(const json& j) {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> a(j.at("rows").get<Eigen::Index>(),
                                                       j.at("cols").get<Eigen::Index>());
  const std::string bits = j.at("bits").get<std::string>();
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = bits[static_cast<size_t>(i)] == '1';
  return a;
}

json tm_config_to_json(const TaskModelConfig& c) {
  json j;
  j["z_slots"] = c.z_slots;
  j["c_slots"] = c.c_slots;
  j["eta_params"] = c.eta_params;
  j["eta_stats"] = c.eta_stats;
  j["em_iters"] = c.em_iters;
  j["match_tol"] = c.match_tol;
  j["gate_thresh"] = c.gate_thresh;
  j["seg_thresh_mult"] = c.seg_thresh_mult;
  j["sigma_init"] = c.sigma_init;
  j["lambda_self_init"] = c.lambda_self_init;
  return j;
}

TaskModelConfig tm_config_from_json(const json& j) {
  TaskModelConfig c;
  c.z_slots = j.at("z_slots").get<int>();
  c.c_slots = j.at("c_slots").get<int>();
  c.eta_params = j.at("eta_params").get<double>();
  c.eta_stats = j.at("eta_stats").get<double>();
  c.em_iters = j.at("em_iters").get<int>();
  c.match_tol = j.at("match_tol").get<double>();
  c.gate_thresh = j.at("gate_thresh").get<double>();
  c.seg_thresh_mult = j.at("seg_thresh_mult").get<double>();
  c.sigma_init = j.at("sigma_init").get<double>();
  c.lambda_self_init = j.at("lambda_self_init").get<double>();
  return c;
}

json rnn_config_to_json(const RNNConfig& c) {
  json j;
  j["n_hidden"] = c.n_hidden;
  j["rank"] = c.rank;
  j["alpha"] = c.alpha;
  j["sigma_r"] = c.sigma_r;
  j["relu"] = c.relu;
  j["input_dim"] = c.input_dim;
  j["output_dim"] = c.output_dim;
  return j;
}

RNNConfig rnn_config_from_json(const json& j) {
  RNNConfig c;
  c.n_hidden = j.at("n_hidden").get<int>();
  c.rank = j.at("rank").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.sigma_r = j.at("sigma_r").get<double>();
  c.relu = j.at("relu").get<bool>();
  c.input_dim = j.at("input_dim").get<int>();
  c.output_dim = j.at("output_dim").get<int>();
  return c;
}

json ctx_weights_to_json(const ContextWeights& w) {
  json j;
  j["U"] = mat_to_json(w.U);
  j["V"] = mat_to_json(w.V);
  j["W_in"] = mat_to_json(w.W_in);
  j["b_in"] = vec_to_json(w.b_in);
  j["W_out"] = mat_to_json(w.W_out);
  j["b_out"] = vec_to_json(w.b_out);
  return j;
}

ContextWeights ctx_weights_from_json(const json& j) {
  ContextWeights w;
  w.U = mat_from_json(j.at("U"));
  w.V = mat_from_json(j.at("V"));
  w.W_in = mat_from_json(j.at("W_in"));
  w.b_in = vec_from_json(j.at("b_in"));
  w.W_out = mat_from_json(j.at("W_out"));
  w.b_out = vec_from_json(j.at("b_out"));
  return w;
}

void check_header(const json& j, const char* kind) {
  if (j.value("format", "") != "cgr-checkpoint") throw ConfigError("not a cgr checkpoint");
  if (j.value("version", 0) != 1) throw ConfigError("unsupported checkpoint version");
  if (j.value("kind", "") != kind)
    throw ConfigError(std::string("checkpoint kind mismatch: expected ") + kind + ", found " +
                      j.value("kind", "?"));
}

}  // namespace

std::string taskmodel_to_json(const TaskModelState& state) {
  json j;
  j["format"] = "cgr-checkpoint";
  j["version"] = 1;
  j["kind"] = "task_model";
  j["config"] = tm_config_to_json(state.cfg);
  j["n_x"] = state.params.n_x;
  j["sigma_hat"] = state.params.sigma_hat;
  j["q_hat"] = json::array();
  for (const auto& m : state.params.q_hat) j["q_hat"].push_back(mat_to_json(m));
  j["lambda_hat"] = json::array();
  for (const auto& m : state.params.lambda_hat) j["lambda_hat"].push_back(mat_to_json(m));
  j["pi_hat"] = mat_to_json(state.params.pi_hat);
  j["task_seen"] = std::vector<int>(state.params.task_seen.begin(), state.params.task_seen.end());
  json s;
  s["emit_sum"] = json::array();
  for (const auto& m : state.stats.emit_sum) s["emit_sum"].push_back(mat_to_json(m));
  s["emit_cnt"] = mat_to_json(state.stats.emit_cnt);
  s["trans_cnt"] = json::array();
  for (const auto& m : state.stats.trans_cnt) s["trans_cnt"].push_back(mat_to_json(m));
  s["init_cnt"] = mat_to_json(state.stats.init_cnt);
  s["resid_sum"] = state.stats.resid_sum;
  s["obs_cnt"] = state.stats.obs_cnt;
  j["stats"] = s;
  j["f_cx"] = bool_table_to_json(state.tables.f_cx);
  j["f_xz"] = bool_table_to_json(state.tables.f_xz);
  return j.dump();
}

TaskModelState taskmodel_from_json(const std::string& text) {
  json j = json::parse(text);
  check_header(j, "task_model");
  TaskModelState st;
  st.cfg = tm_config_from_json(j.at("config"));
  const int n_x = j.at("n_x").get<int>();
  st.params = TaskModelParams(st.cfg, n_x);
  st.params.sigma_hat = j.at("sigma_hat").get<double>();
  st.params.q_hat.clear();
  for (const auto& m : j.at("q_hat")) st.params.q_hat.push_back(mat_from_json(m));
  st.params.lambda_hat.clear();
  for (const auto& m : j.at("lambda_hat")) st.params.lambda_hat.push_back(mat_from_json(m));
  st.params.pi_hat = mat_from_json(j.at("pi_hat"));
  auto seen = j.at("task_seen").get<std::vector<int>>();
  st.params.task_seen.assign(seen.begin(), seen.end());
  st.stats = SuffStats(st.cfg, n_x);
  const auto& s = j.at("stats");
  st.stats.emit_sum.clear();
  for (const auto& m : s.at("emit_sum")) st.stats.emit_sum.push_back(mat_from_json(m));
  st.stats.emit_cnt = mat_from_json(s.at("emit_cnt"));
  st.stats.trans_cnt.clear();
  for (const auto& m : s.at("trans_cnt")) st.stats.trans_cnt.push_back(mat_from_json(m));
  st.stats.init_cnt = mat_from_json(s.at("init_cnt"));
  st.stats.resid_sum = s.at("resid_sum").get<double>();
  st.stats.obs_cnt = s.at("obs_cnt").get<double>();
  st.tables.f_cx = bool_table_from_json(j.at("f_cx"));
  st.tables.f_xz = bool_table_from_json(j.at("f_xz"));
  return st;
}

std::string bank_to_json(const ContextBank& bank, const TrainState& ts) {
  json j;
  j["format"] = "cgr-checkpoint";
  j["version"] = 1;
  j["kind"] = "context_bank";
  j["config"] = rnn_config_to_json(bank.cfg);
  j["n_slots"] = bank.n_slots();
  j["slots"] = json::array();
  for (int z = 0; z < bank.n_slots(); ++z) {
    if (!bank.allocated[z]) continue;
    json s;
    s["z"] = z;
    s["weights"] = ctx_weights_to_json(bank.ctx[z]);
    s["adam_m"] = ctx_weights_to_json(ts.slot[z].m);
    s["adam_v"] = ctx_weights_to_json(ts.slot[z].v);
    s["adam_step"] = ts.slot[z].step;
    s["lr"] = ts.slot[z].lr;
    s["l2_on"] = ts.slot[z].l2_on;
    j["slots"].push_back(s);
  }
  json o;
  o["beta1"] = ts.beta1;
  o["beta2"] = ts.beta2;
  o["eps"] = ts.eps;
  o["base_lr"] = ts.base_lr;
  o["lr_decay"] = ts.lr_decay;
  o["l2_coef"] = ts.l2_coef;
  o["activity_thresh"] = ts.activity_thresh;
  j["optimizer"] = o;
  return j.dump();
}

void bank_from_json(const std::string& text, ContextBank& bank, TrainState& ts) {
  json j = json::parse(text);
  check_header(j, "context_bank");
  RNNConfig cfg = rnn_config_from_json(j.at("config"));
  bank = ContextBank(cfg, j.at("n_slots").get<int>());
  ts = TrainState(bank, j.at("optimizer").at("base_lr").get<double>());
  const auto& o = j.at("optimizer");
  ts.beta1 = o.at("beta1").get<double>();
  ts.beta2 = o.at("beta2").get<double>();
  ts.eps = o.at("eps").get<double>();
  ts.lr_decay = o.at("lr_decay").get<double>();
  ts.l2_coef = o.at("l2_coef").get<double>();
  ts.activity_thresh = o.at("activity_thresh").get<double>();
  for (const auto& s : j.at("slots")) {
    const int z = s.at("z").get<int>();
    bank.ctx[z] = ctx_weights_from_json(s.at("weights"));
    bank.allocated[z] = true;
    ts.slot[z].m = ctx_weights_from_json(s.at("adam_m"));
    ts.slot[z].v = ctx_weights_from_json(s.at("adam_v"));
    ts.slot[z].step = s.at("adam_step").get<long>();
    ts.slot[z].lr = s.at("lr").get<double>();
    ts.slot[z].l2_on = s.at("l2_on").get<bool>();
  }
}

std::string general_rnn_to_json(const GeneralRNN& net) {
  json j;
  j["format"] = "cgr-checkpoint";
  j["version"] = 1;
  j["kind"] = "general_rnn";
  j["config"] = rnn_config_to_json(net.cfg);
  j["n_tasks"] = net.n_tasks;
  j["W_rec"] = mat_to_json(net.W_rec);
  j["W_in"] = mat_to_json(net.W_in);
  j["W_task"] = mat_to_json(net.W_task);
  j["b_in"] = vec_to_json(net.b_in);
  j["W_out"] = mat_to_json(net.W_out);
  j["b_out"] = vec_to_json(net.b_out);
  return j.dump();
}

GeneralRNN general_rnn_from_json(const std::string& text) {
  json j = json::parse(text);
  check_header(j, "general_rnn");
  GeneralRNN net;
  net.cfg = rnn_config_from_json(j.at("config"));
  net.n_tasks = j.at("n_tasks").get<int>();
  net.W_rec = mat_from_json(j.at("W_rec"));
  net.W_in = mat_from_json(j.at("W_in"));
  net.W_task = mat_from_json(j.at("W_task"));
  net.b_in = vec_from_json(j.at("b_in"));
  net.W_out = mat_from_json(j.at("W_out"));
  net.b_out = vec_from_json(j.at("b_out"));
  return net;
}

std::string checkpoint_kind(const std::string& text) {
  json j = json::parse(text);
  if (j.value("format", "") != "cgr-checkpoint") throw ConfigError("not a cgr checkpoint");
  return j.value("kind", "");
}

std::string describe_checkpoint(const std::string& text) {
  json j = json::parse(text);
  if (j.value("format", "") != "cgr-checkpoint") throw ConfigError("not a cgr checkpoint");
  std::ostringstream out;
  const std::string kind = j.value("kind", "?");
  out << "kind: " << kind << "\nversion: " << j.value("version", 0) << "\n";
  if (kind == "task_model") {
    out << "n_x: " << j.at("n_x").get<int>() << "\nsigma_hat: " << j.at("sigma_hat").get<double>()
        << "\nz_slots: " << j.at("config").at("z_slots").get<int>() << "\n";
  } else if (kind == "context_bank") {
    out << "n_hidden: " << j.at("config").at("n_hidden").get<int>()
        << "\nrank: " << j.at("config").at("rank").get<int>()
        << "\nallocated: " << j.at("slots").size() << "/" << j.at("n_slots").get<int>() << "\n";
    for (const auto& s : j.at("slots"))
      out << "  slot " << s.at("z").get<int>() << " lr=" << s.at("lr").get<double>()
          << " adam_step=" << s.at("adam_step").get<long>() << "\n";
  } else if (kind == "general_rnn") {
    out << "n_hidden: " << j.at("config").at("n_hidden").get<int>()
        << "\nn_tasks: " << j.at("n_tasks").get<int>() << "\n";
  }
  return out.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
}

}  // namespace cgr
