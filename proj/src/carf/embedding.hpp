#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace carf {

// Language-side inputs for one referring expression. E holds one embedding
// row per token; e_t is the sentence embedding (L2-normalized row mean).
struct QueryEmbedding {
  std::vector<std::string> tokens;
  Tensor E;                    // L x d, unit rows when produced by toy_embed
  std::vector<double> e_t;     // d
  int target_label = -1;
};

// A referring query as stored on disk; embeddings either come from
// `embeddings_path` or are synthesized from the tokens.
struct Query {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  int target_label = -1;
  std::string embeddings_path;  // optional; relative to the query file
};

// Deterministic hash-based word embeddings: row j, component k is
// fnv1a64(token_j + ":" + k) / 2^63 - 1.0, row L2-normalized afterwards.
// A cheap, platform-stable stand-in for a real text encoder: distinct tokens
// land nearly orthogonal in moderate dimensions.
QueryEmbedding toy_embed(const std::vector<std::string>& tokens, int64_t d);

// Recomputes e_t from E (normalized row mean).
void refresh_sentence_embedding(QueryEmbedding& qe);

// Embedding file: JSON {"d": int, "rows": [[...], ...]}. Rows pass through
// verbatim; e_t is recomputed.
QueryEmbedding load_embeddings(const std::string& path);
void save_embeddings(const QueryEmbedding& qe, const std::string& path);

// Query file: JSON array of {"id","text","tokens","target_label",
// "embeddings_path"?}.
std::vector<Query> load_queries(const std::string& path);
void save_queries(const std::vector<Query>& queries, const std::string& path);

// Resolve a query to its embeddings: external file when given (validating
// dimension d), toy embedder otherwise. `query_file_dir` anchors relative
// embedding paths.
QueryEmbedding resolve_query_embedding(const Query& q, int64_t d,
                                       const std::string& query_file_dir);

// Three toy-embedded queries matching the three labeled clusters of the
// smoke scene (labels 0, 1, 2).
std::vector<Query> smoke_queries();

}  // namespace carf
