#include "embedding.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "common.hpp"

namespace carf {

using nlohmann::json;

QueryEmbedding toy_embed(const std::vector<std::string>& tokens, int64_t d) {
  if (d < 2) throw_validation("toy_embed: d must be >= 2");
  if (tokens.empty()) throw_validation("toy_embed: token list is empty");
  QueryEmbedding qe;
  qe.tokens = tokens;
  qe.E = Tensor({static_cast<int64_t>(tokens.size()), d});
  for (size_t j = 0; j < tokens.size(); ++j) {
    if (tokens[j].empty()) throw_validation("toy_embed: empty token at position " + std::to_string(j));
    double* row = qe.E.data.data() + static_cast<int64_t>(j) * d;
    for (int64_t k = 0; k < d; ++k) {
      const std::string key = tokens[j] + ":" + std::to_string(k);
      row[k] = static_cast<double>(fnv1a64(key)) * 0x1.0p-63 - 1.0;
    }
    double norm = 0.0;
    for (int64_t k = 0; k < d; ++k) norm += row[k] * row[k];
    norm = std::sqrt(norm);
    if (norm < 1e-300) throw_numeric("toy_embed: degenerate zero row for token '" + tokens[j] + "'");
    for (int64_t k = 0; k < d; ++k) row[k] /= norm;
  }
  refresh_sentence_embedding(qe);
  return qe;
}

void refresh_sentence_embedding(QueryEmbedding& qe) {
  const int64_t rows = qe.E.rows(), d = qe.E.cols();
  if (rows == 0) throw_validation("embedding: no rows to average");
  qe.e_t.assign(static_cast<size_t>(d), 0.0);
  for (int64_t j = 0; j < rows; ++j)
    for (int64_t k = 0; k < d; ++k) qe.e_t[static_cast<size_t>(k)] += qe.E.at(j, k);
  double norm = 0.0;
  for (double& v : qe.e_t) {
    v /= static_cast<double>(rows);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm < 1e-300) throw_numeric("embedding: sentence embedding has zero norm");
  for (double& v : qe.e_t) v /= norm;
}

QueryEmbedding load_embeddings(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("embeddings: cannot open: " + path);
  json root;
  try {
    root = json::parse(f);
  } catch (const json::exception& e) {
    throw_io("embeddings: JSON parse error in " + path + ": " + e.what());
  }
  const std::string ctx = "embeddings " + path;
  if (!root.is_object() || !root.contains("d") || !root.contains("rows"))
    throw_validation(ctx + ": expected {\"d\", \"rows\"}");
  const int64_t d = root["d"].get<int64_t>();
  if (d < 2) throw_validation(ctx + ": /d: must be >= 2");
  const json& rows = root["rows"];
  if (!rows.is_array() || rows.empty()) throw_validation(ctx + ": /rows: expected a non-empty array");

  QueryEmbedding qe;
  qe.E = Tensor({static_cast<int64_t>(rows.size()), d});
  for (size_t j = 0; j < rows.size(); ++j) {
    const json& row = rows[j];
    if (!row.is_array() || static_cast<int64_t>(row.size()) != d)
      throw_validation(ctx + ": /rows/" + std::to_string(j) + ": expected " + std::to_string(d) +
                       " numbers");
    for (int64_t k = 0; k < d; ++k) {
      const json& v = row[static_cast<size_t>(k)];
      if (!v.is_number())
        throw_validation(ctx + ": /rows/" + std::to_string(j) + "/" + std::to_string(k) +
                         ": expected a number");
      qe.E.at(static_cast<int64_t>(j), k) = v.get<double>();
    }
  }
  refresh_sentence_embedding(qe);
  return qe;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_embeddings(const QueryEmbedding& qe, const std::string& path) {
  std::string out = "{\"d\": " + std::to_string(qe.E.cols()) + ", \"rows\": [\n";
  for (int64_t j = 0; j < qe.E.rows(); ++j) {
    out += "[";
    for (int64_t k = 0; k < qe.E.cols(); ++k)
      out += fmt17(qe.E.at(j, k)) + std::string(k + 1 < qe.E.cols() ? "," : "");
    out += j + 1 < qe.E.rows() ? "],\n" : "]\n";
  }
  out += "]}\n";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("embeddings: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw_io("embeddings: write failed: " + path);
}

std::vector<Query> load_queries(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("queries: cannot open: " + path);
  json root;
  try {
    root = json::parse(f);
  } catch (const json::exception& e) {
    throw_io("queries: JSON parse error in " + path + ": " + e.what());
  }
  const std::string ctx = "queries " + path;
  if (!root.is_array() || root.empty())
    throw_validation(ctx + ": expected a non-empty JSON array of queries");

  std::vector<Query> out;
  for (size_t i = 0; i < root.size(); ++i) {
    const std::string base = "/" + std::to_string(i);
    const json& jq = root[i];
    if (!jq.is_object()) throw_validation(ctx + ": " + base + ": expected an object");
    Query q;
    if (!jq.contains("id") || !jq["id"].is_string())
      throw_validation(ctx + ": " + base + "/id: required string missing");
    q.id = jq["id"].get<std::string>();
    if (jq.contains("text")) q.text = jq["text"].get<std::string>();
    if (!jq.contains("tokens") || !jq["tokens"].is_array() || jq["tokens"].empty())
      throw_validation(ctx + ": " + base + "/tokens: required non-empty array missing");
    for (const auto& t : jq["tokens"]) {
      if (!t.is_string()) throw_validation(ctx + ": " + base + "/tokens: entries must be strings");
      q.tokens.push_back(t.get<std::string>());
    }
    if (!jq.contains("target_label") || !jq["target_label"].is_number_integer())
      throw_validation(ctx + ": " + base + "/target_label: required integer missing");
    q.target_label = jq["target_label"].get<int>();
    if (jq.contains("embeddings_path")) q.embeddings_path = jq["embeddings_path"].get<std::string>();
    out.push_back(std::move(q));
  }
  return out;
}

void save_queries(const std::vector<Query>& queries, const std::string& path) {
  json root = json::array();
  for (const Query& q : queries) {
    json jq{{"id", q.id}, {"text", q.text}, {"tokens", q.tokens}, {"target_label", q.target_label}};
    if (!q.embeddings_path.empty()) jq["embeddings_path"] = q.embeddings_path;
    root.push_back(std::move(jq));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("queries: cannot open for writing: " + path);
  f << root.dump(1) << "\n";
}

QueryEmbedding resolve_query_embedding(const Query& q, int64_t d,
                                       const std::string& query_file_dir) {
  QueryEmbedding qe;
  if (!q.embeddings_path.empty()) {
    std::filesystem::path p(q.embeddings_path);
    if (p.is_relative() && !query_file_dir.empty()) p = std::filesystem::path(query_file_dir) / p;
    qe = load_embeddings(p.string());
    if (qe.E.cols() != d)
      throw_validation("query '" + q.id + "': embedding dimension " +
                       std::to_string(qe.E.cols()) + " does not match model d=" +
                       std::to_string(d));
    qe.tokens = q.tokens;
  } else {
    qe = toy_embed(q.tokens, d);
  }
  qe.target_label = q.target_label;
  return qe;
}



std::vector<Query> smoke_queries() {
  return {
      {"left_cluster", "the red cluster on the left", {"red", "cluster", "left"}, 0, ""},
      {"right_cluster", "the green cluster on the right", {"green", "cluster", "right"}, 1, ""},
      {"top_cluster", "the blue cluster on top", {"blue", "cluster", "top"}, 2, ""},
  };
}

}  // namespace carf
