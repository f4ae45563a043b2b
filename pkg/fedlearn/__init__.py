# fedlearn - vertical federated learning toolkit
