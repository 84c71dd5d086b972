# SA3 - Systems Module: attention, detector, alignment, transformation, training, evaluation
