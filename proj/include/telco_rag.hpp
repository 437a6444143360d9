#pragma once

#include "telco_rag/chunking.hpp"
#include "telco_rag/concurrency.hpp"
#include "telco_rag/config.hpp"
#include "telco_rag/embedding.hpp"
#include "telco_rag/embedding_store.hpp"
#include "telco_rag/error.hpp"
#include "telco_rag/eval.hpp"
#include "telco_rag/hashing.hpp"
#include "telco_rag/http.hpp"
#include "telco_rag/llm.hpp"
#include "telco_rag/mock_llm.hpp"
#include "telco_rag/pipeline.hpp"
#include "telco_rag/prompt_builder.hpp"
#include "telco_rag/query_refine.hpp"
#include "telco_rag/router.hpp"
#include "telco_rag/runtime.hpp"
#include "telco_rag/service.hpp"
#include "telco_rag/standards_retriever.hpp"
#include "telco_rag/tokenize.hpp"
#include "telco_rag/vector_index.hpp"
#include "telco_rag/web_retriever.hpp"
