#pragma once

// Umbrella header: the full heterogeneous recurrent graph network library.

#include <hrgn/autodiff.hpp>
#include <hrgn/params.hpp>
#include <hrgn/graph.hpp>
#include <hrgn/nn.hpp>
#include <hrgn/coupling.hpp>
#include <hrgn/observations.hpp>
#include <hrgn/model.hpp>
#include <hrgn/assimilate.hpp>
#include <hrgn/enkf.hpp>
#include <hrgn/loss.hpp>
#include <hrgn/dataio.hpp>
#include <hrgn/synth.hpp>
#include <hrgn/train.hpp>
#include <hrgn/workflow.hpp>
