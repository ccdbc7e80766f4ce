#pragma once

#include "rea/agents.hpp"
#include "rea/assessment.hpp"
#include "rea/backend.hpp"
#include "rea/domain.hpp"
#include "rea/error.hpp"
#include "rea/experience.hpp"
#include "rea/metrics.hpp"
#include "rea/orchestrator.hpp"
#include "rea/prompts.hpp"
#include "rea/text.hpp"
#include "rea/transcript.hpp"
