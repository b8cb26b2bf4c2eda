# BatchNeuralUCB engine
