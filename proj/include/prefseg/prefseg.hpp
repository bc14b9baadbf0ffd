#pragma once
// Umbrella header (everything except the HTTP service, see service_api.hpp).
#include "prefseg/checkpoint.hpp"
#include "prefseg/clicking_agent.hpp"
#include "prefseg/core_types.hpp"
#include "prefseg/feature_provider.hpp"
#include "prefseg/feedback_session.hpp"
#include "prefseg/label_propagation.hpp"
#include "prefseg/manifest.hpp"
#include "prefseg/metrics.hpp"
#include "prefseg/oracle.hpp"
#include "prefseg/orchestrator.hpp"
#include "prefseg/pnm.hpp"
#include "prefseg/seg_model.hpp"
#include "prefseg/tensor.hpp"
