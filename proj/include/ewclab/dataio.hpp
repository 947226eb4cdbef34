#pragma once

// JSON-lines files for arithmetic datasets and text corpora.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ewclab/datagen.hpp"

namespace ewclab {

// {"a":..,"op":"+"|"-","b":..,"result":..,"ids":[..],"mask_positions":[..],"targets":[..]} per line.
std::string dataset_jsonl(const std::vector<ArithInstance>& data);
std::vector<ArithInstance> parse_dataset_jsonl(std::string_view text);

// {"ids":[..],"mask_positions":[..],"targets":[..]} per line.
std::string corpus_jsonl(const std::vector<TokenSeq>& corpus);
std::vector<TokenSeq> parse_corpus_jsonl(std::string_view text);

} // namespace ewclab
